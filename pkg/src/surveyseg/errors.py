"""Exception types raised across the package.

Every error derives from :class:`SurveySegError`, which itself is a
``ValueError`` so callers that only care about "bad input" can catch that.
"""


class SurveySegError(ValueError):
    pass


# ingest
class UnknownColumn(SurveySegError):
    pass


class BadCode(SurveySegError):
    pass


class MalformedRow(SurveySegError):
    pass


class NumericParse(SurveySegError):
    pass


class SampleTooLarge(SurveySegError):
    pass


class SchemaError(SurveySegError):
    pass


class SchemaMismatch(SurveySegError):
    pass


class NotCategorical(SurveySegError):
    pass


class MissingData(SurveySegError):
    pass


class LengthMismatch(SurveySegError):
    pass


# inference
class EmptyTable(SurveySegError):
    pass


class DegenerateMargins(SurveySegError):
    pass


class DegeneratePool(SurveySegError):
    pass


# clustering
class EmptyCluster(SurveySegError):
    pass


class KOutOfRange(SurveySegError):
    pass


class DimensionMismatch(SurveySegError):
    pass


class NoNumericAndNoCategorical(SurveySegError):
    pass


# embedding
class PerplexityTooLarge(SurveySegError):
    pass


class TooManyPoints(SurveySegError):
    pass


class ConstantColumnWarning(UserWarning):
    pass


# gbdt
class TooFewRows(SurveySegError):
    pass


class SingleClass(SurveySegError):
    pass


# report
class TooFewPoints(SurveySegError):
    pass


class NonMonotoneCurve(SurveySegError):
    pass
