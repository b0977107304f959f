"""Exception types.

Every data-level failure raises a subclass of :class:`EldError`; the CLI maps
these to exit status 2.
"""


class EldError(ValueError):
    pass


class MalformedLine(EldError):
    def __init__(self, msg, lineno=None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + msg)


class DuplicateUttId(EldError):
    pass


class UttIdMismatch(EldError):
    pass


class EmptyVocabulary(EldError):
    pass


class NotFitted(EldError):
    pass


class DegenerateMatrix(EldError):
    pass


class NonFiniteObjective(EldError, ArithmeticError):
    def __init__(self, iteration, utt_id, value):
        self.iteration = iteration
        self.utt_id = utt_id
        self.value = value
        super().__init__(
            f"non-finite ELBO at iteration {iteration}: worst document {utt_id!r} (elbo={value})"
        )


class VocabularyMismatch(EldError):
    pass


class ClassMissing(EldError):
    pass


class NonPsdCovariance(EldError, ArithmeticError):
    pass


class SingleClass(EldError):
    pass


class TooFewExamples(EldError):
    pass


class NotConverged(UserWarning):
    """Optimizer stopped before its tolerance; the model is still usable."""
