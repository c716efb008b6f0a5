"""Exception hierarchy shared by every pipeline stage."""


class FlowIdsError(Exception):
    """Base class. ``code`` is the machine-readable name used by the CLI."""

    code = "FlowIdsError"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return out


def _jsonable(value):
    return isinstance(value, (str, int, float, bool, type(None), list, dict))


def _named(name, doc):
    return type(name, (FlowIdsError,), {"code": name, "__doc__": doc})


OutOfOrderTimestamp = _named("OutOfOrderTimestamp", "Packet timestamp decreased within one input stream.")
UnsupportedProtocol = _named("UnsupportedProtocol", "Packet is neither TCP nor UDP.")
TooFewSamples = _named("TooFewSamples", "Fewer positive samples than the fitter needs.")
EmptySample = _named("EmptySample", "Statistic requested on an empty sample.")
EmptyInput = _named("EmptyInput", "Operation requires at least one input row.")
MixedLabels = _named("MixedLabels", "Rows for one image carry different labels.")
MissingSpec = _named("MissingSpec", "Normalization spec absent or incomplete.")
ShapeMismatch = _named("ShapeMismatch", "Tensor or image has an unexpected shape.")
SingleClassDataset = _named("SingleClassDataset", "Training split lacks one of the two labels.")
LengthMismatch = _named("LengthMismatch", "Predictions and truth differ in length.")
SingleClassTruth = _named("SingleClassTruth", "PR curve needs both classes in the truth labels.")
StoreUnavailable = _named("StoreUnavailable", "Policy store cannot be read or written.")
UnknownKind = _named("UnknownKind", "Unknown attack kind.")
CheckpointError = _named("CheckpointError", "Model checkpoint is malformed.")


class NoConvergence(FlowIdsError):
    """Root finder gave up; ``last`` holds the final iterate."""

    code = "NoConvergence"

    def __init__(self, message="", last=None, **details):
        super().__init__(message, last=last, **details)
        self.last = last
