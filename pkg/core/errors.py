"""
Exception hierarchy shared by every NetResil module.
The CLI maps these onto exit codes (1 for usage/config/data, 2 for numerics).
"""

from typing import Optional, Sequence


class NetResilError(Exception):
    """Base class for all NetResil errors"""


class ShapeMismatchError(NetResilError, ValueError):
    def __init__(self, op: str, left: Sequence[int], right: Sequence[int]):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        super().__init__(f"{op}: shape mismatch between {self.left} and {self.right}")


class DatasetError(NetResilError, ValueError):
    """Malformed, inconsistent or insufficient dataset"""


class ConfigError(NetResilError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class DivergenceError(NetResilError, ArithmeticError):
    """
    Numerical failure: non-finite states during integration,
    NaN gradients or a NaN loss during training.
    """

    def __init__(self, message: str, time: Optional[float] = None, node: Optional[int] = None,
                 epoch: Optional[int] = None, parameter: Optional[str] = None):
        self.time = time
        self.node = node
        self.epoch = epoch
        self.parameter = parameter
        details = []
        if time is not None:
            details.append(f"t={time:.6g}")
        if node is not None:
            details.append(f"node={node}")
        if epoch is not None:
            details.append(f"epoch={epoch}")
        if parameter is not None:
            details.append(f"parameter={parameter}")
        if details:
            message = f"{message} [{', '.join(details)}]"
        super().__init__(message)
