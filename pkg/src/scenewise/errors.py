"""Exception hierarchy shared across the engine."""


class EngineError(Exception):
    """Base class for all engine failures."""


class InvalidInputError(EngineError):
    """An operation received arguments that violate its preconditions."""


class TransportError(EngineError):
    """A provider could not be reached or answered with a server fault; retryable."""


class ProtocolError(EngineError):
    """A provider answered with a payload that violates the wire contract."""


class PipelineError(EngineError):
    """A pipeline stage failed in a way that is not a recoverable model fault."""


class ExtractionError(EngineError):
    """Knowledge extraction failed for one scene and modality after a retry."""


class JudgeResponseError(EngineError):
    """The judge model produced an unusable response after a re-ask."""


class PrerequisiteError(EngineError):
    """A stage was invoked before the stage whose artifacts it needs."""


class DataIntegrityError(EngineError):
    """Persisted artifacts disagree with each other or are internally broken."""


class StoreNotFoundError(EngineError):
    """No persisted store bundle exists at the given path."""


class StoreVersionError(DataIntegrityError):
    """A persisted bundle carries an unsupported format version."""
