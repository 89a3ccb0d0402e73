"""Evolution operators of parabolic systems with unbounded coefficients, and executable checks of their estimates."""

__version__ = "0.1.0"
