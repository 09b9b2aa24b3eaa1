"""egressmon: egress reference monitor against covert channels"""

from egressmon.core import run

__version__ = '0.3-dev'
