from . import errors
from . import polysnap
from . import camera
from . import datagen
from . import harness
from . import baselines
from . import seqmodel
from . import file_handler
from . import export
from . import config_manager
