from ._dqt import *  # noqa: F401,F403
from ._dqt import __doc__  # noqa: F401
