"""
Exception hierarchy for quantreg
"""

from typing import Optional


class QuantRegError(Exception):
    """Base class for every error raised by this package"""


class DimensionError(QuantRegError, ValueError):
    """Tensor shapes do not compose"""


class InputError(QuantRegError, ValueError):
    """Invalid batch or label values"""


class DataFormatError(QuantRegError, ValueError):
    """
    Malformed CIFAR-10 bytes

    Attributes:
        offset: Byte offset where the problem was detected
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigurationError(QuantRegError, ValueError):
    """Inconsistent regularizer, codebook or experiment settings"""


class MisuseError(QuantRegError, ValueError):
    """Operation called for a regularizer kind it does not support"""


class DivergenceError(QuantRegError, RuntimeError):
    """
    Training objective became non-finite

    Attributes:
        epoch: Epoch index where divergence happened
        batch: Mini-batch index within the epoch
    """

    def __init__(self, epoch: int, batch: int, value: float, phase: Optional[str] = None):
        where = f"{phase} " if phase else ""
        super().__init__(
            f"Non-finite {where}objective {value} at epoch {epoch}, batch {batch}"
        )
        self.epoch = epoch
        self.batch = batch
        self.value = value
