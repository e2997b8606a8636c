# Landmarking core modules
