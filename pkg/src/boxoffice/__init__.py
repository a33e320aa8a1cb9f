"""Opening-weekend box-office prediction from screen counts and encyclopedia pageviews."""

from .core import (
    AlignedFilm,
    AlignmentMethod,
    Dataset,
    FilmRecord,
    Market,
    PageviewSeries,
    parse_catalog,
    serialize_catalog,
    validate_dataset,
)
from .modeling import (
    build_design_matrix,
    cumulative_views,
    evaluate,
    exclude_top_grossing,
    fit_ols,
    loocv_predictions,
    predict,
    r2_evolution,
    r_squared,
    relative_errors,
)

__version__ = "0.1.0"
