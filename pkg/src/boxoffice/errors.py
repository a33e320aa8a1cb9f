"""Exception hierarchy shared across the pipeline stages."""


class BoxOfficeError(Exception):
    pass


class CatalogError(BoxOfficeError, ValueError):
    """A catalog row could not be parsed or violates a record invariant."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class ConfigurationError(BoxOfficeError, ValueError):
    pass


class ProviderError(BoxOfficeError):
    """Transport-level failure talking to an external service; retriable."""

    def __init__(self, message: str, diagnostic: str | None = None):
        self.diagnostic = diagnostic or message
        super().__init__(message)


class QuotaExceededError(BoxOfficeError):
    """The provider refuses further requests; never retried."""


class ArticleNotFoundError(BoxOfficeError):
    """The pageview provider has no record of the article; never retried."""


class DataIntegrityError(BoxOfficeError, ValueError):
    pass


class FetchError(BoxOfficeError):
    def __init__(self, article_url: str, diagnostic: str, attempts: int = 0):
        self.article_url = article_url
        self.diagnostic = diagnostic
        self.attempts = attempts
        super().__init__(f"fetching {article_url} failed after {attempts} attempt(s): {diagnostic}")


class EmptyDatasetError(BoxOfficeError):
    pass


class CoverageError(BoxOfficeError, ValueError):
    pass


class FitError(BoxOfficeError, ValueError):
    pass


class UnderdeterminedFitError(FitError):
    pass


class DegenerateTargetError(FitError):
    pass


class FoldError(FitError):
    def __init__(self, message: str, fold: int | None = None):
        self.fold = fold
        super().__init__(message)
