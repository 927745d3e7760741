"""Multi-view RGB-D face anonymization toolkit.

Localizes heads in 3D from skeletons and depth maps, decides per-camera
visibility against the measured depth, and replaces faces in the color
streams with a textured template mesh blended into the image.
"""

__version__ = "0.1.0"
