"""Neural video representation with hierarchical temporal modeling and an
entropy-coded weight bitstream, sized for CPU experiments on toy videos."""

__version__ = "0.1.0"
