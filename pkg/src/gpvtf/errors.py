"""Exception hierarchy shared by the library and the CLI."""


class GPVTFError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GPVTFError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(GPVTFError, ValueError):
    """An argument is outside its documented range."""


class DataError(GPVTFError, ValueError):
    """Input files are malformed or inconsistent."""


class AlignmentError(DataError):
    """Modality files disagree on the number of samples."""


class ParseError(DataError):
    """A cell of a feature or label file is not a number."""

    def __init__(self, path, row, col, value):
        self.path, self.row, self.col, self.value = path, row, col, value
        super().__init__(f"{path}: row {row}, column {col}: cannot parse {value!r}")


class LabelError(DataError):
    """A ground-truth label lies outside 0..k-1."""


class DegenerateClusterError(GPVTFError, ArithmeticError):
    """A cluster received zero total soft assignment."""


class DivergenceError(GPVTFError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, loss_name, epoch, value):
        self.loss_name, self.epoch, self.value = loss_name, epoch, value
        super().__init__(f"loss {loss_name} became {value} at epoch {epoch}")
