"""
Weighted covariance intersection for range-based distributed cooperative
localization of IMU/UWB swarms.

Modules
-------
attitude      quaternion and rotation-vector helpers
ins           strapdown mechanization and 15-state error model
ci_fusion     covariance intersection, cost criteria, weight search
ranging       anchor and inter-agent range observation models
dcl_agent     per-agent distributed filter
ccl_center    centralized joint EKF baseline
simworld      trajectories, sensors, connectivity and events
metrics       RMSE, STD and NEES summaries
experiment    Monte-Carlo drivers
cli           command-line entry point
"""

__version__ = "0.1.0"
