"""Time-variant diffusive mobile molecular communication channel."""
