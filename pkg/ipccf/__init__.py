# __init__.py

class LazyImport:
    def __init__(self, module_name):
        self.module_name = module_name
        self.module = None

    def __getattr__(self, name):
        if self.module is None:
            self.module = __import__(self.module_name, globals(), locals(), [name], 0)
        return getattr(self.module, name)

# Lazy-load modules in package
utils = LazyImport('ipccf.utils')
dataset = LazyImport('ipccf.dataset')
graph = LazyImport('ipccf.graph')
autodiff = LazyImport('ipccf.autodiff')
model = LazyImport('ipccf.model')
objective = LazyImport('ipccf.objective')
evaluation = LazyImport('ipccf.evaluation')
training = LazyImport('ipccf.training')
config = LazyImport('ipccf.config')
metadata = LazyImport('ipccf.metadata')
simulation = LazyImport('ipccf.simulation')
analysis = LazyImport('ipccf.analysis')
visualization = LazyImport('ipccf.visualization')
cli = LazyImport('ipccf.cli')

# Define what is available to import from the package
__all__ = [
    'utils', 'dataset', 'graph', 'autodiff', 'model', 'objective', 'evaluation',
    'training', 'config', 'metadata', 'simulation', 'analysis', 'visualization', 'cli'
]

# Package metadata
__author__ = 'Andrew Xu'
__email__ = 'qiyuanxu95@gmail.com'
__version__ = '0.1.0'
