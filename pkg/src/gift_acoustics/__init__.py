from .errors import ConfigError, GeometryError, GiftError, NumericalError
