from izaber import config
from izaber.startup import request_initialize, initializer

from .config import CONFIG_BASE, RunConfig

__version__ = '1.0.20261017'


@initializer('catt')
def load_config(**kwargs):
    request_initialize('config', **kwargs)
    config.config_amend_(CONFIG_BASE)
