"""CP-structured tensor regression: ridge, logistic, mixture of experts.

Vectors are the order-1 special case throughout, so the classical vector
models fall out of the same code paths on flattened inputs.
"""

from .data import RegressionDataset, one_hot, soft_labels
from .errors import (
    DataError,
    DegenerateComponentError,
    ModelIntegrityError,
    NumericalError,
    ParseError,
    ShapeMismatchError,
)
from .logistic import (
    LogisticFitOptions,
    TLRModel,
    tlr_fit,
    tlr_nll_and_grad,
    tlr_posterior,
    tlr_posterior_many,
)
from .mixture import (
    EMFitReport,
    Expert,
    MixtureFitOptions,
    TMEModel,
    bic,
    e_step,
    expert_mean,
    m_step,
    tme_density,
    tme_fit,
    tme_predict,
    tme_predict_many,
)
from .ridge import RidgeFitOptions, TRRModel, trr_fit, trr_predict, trr_predict_many
from .shapes import ShapeTruth, gen_shape_dataset, make_shape, weight_rmse
from .tensors import (
    CPFactors,
    DenseTensor,
    cp_inner,
    cp_reconstruct,
    design_row,
    inner_product,
    khatri_rao,
    matricize,
    vectorize,
)

__version__ = "0.1.0"
