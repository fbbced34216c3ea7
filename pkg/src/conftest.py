import logging

import matplotlib

matplotlib.use("Agg")

logging.getLogger("matplotlib").setLevel(logging.WARNING)
