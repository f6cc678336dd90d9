class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


class MalformedFileError(InvalidInputError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}, line {line_no}: {msg}")
        self.path = path
        self.line_no = line_no


class ValidationError(InvalidInputError):
    pass
