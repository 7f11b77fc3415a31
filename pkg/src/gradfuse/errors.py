"""Error taxonomy shared by the library and the command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""


class UsageError(Exception):
    exit_code = 1


class DataError(Exception):
    exit_code = 2


class NumericalError(Exception):
    exit_code = 3
