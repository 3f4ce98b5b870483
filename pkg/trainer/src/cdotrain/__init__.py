"""Training side of the CDS network toolchain.

Produces weight files for the point network g (CDS quotes from
(rho, beta, x0)) and the distance network f (initial distances from
(rho, beta) for a fixed market quote vector), in the portable format the
pricing library loads.  All interop happens through files: datasets in,
weights and loss curves out.
"""

from .errors import ConfigError, TrainerError, WeightFormatError
from .formats import (
    WeightFile,
    f_layer_spec,
    g_layer_spec,
    read_dataset,
    read_quotes_csv,
    read_weight_file,
    write_weight_file,
)
from .models import GatherConv1d, SeqNet, make_distance_net, make_point_net
from .training import (
    FTrainReport,
    GTrainReport,
    TrainSpecF,
    TrainSpecG,
    train_f,
    train_g,
)

__all__ = [name for name in dir() if not name.startswith("_")]
