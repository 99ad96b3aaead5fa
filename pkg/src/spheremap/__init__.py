"""spheremap: pendulum-driven spherical mapping robot simulator,
reference LiDAR-inertial odometry, and map-accuracy evaluation."""

__version__ = "0.1.0"
