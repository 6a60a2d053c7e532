class ThinShellError(Exception):
    """General error with the thin shell library. The error message should provide more information."""

    pass


class MeshLoadError(ThinShellError):
    """The mesh file could not be read: the file is missing, the format is unknown, a record is malformed or the mesh
    is empty."""

    pass


class DegenerateMeshError(ThinShellError):
    """The mesh has no usable geometry, for example a bounding box with zero extent."""

    pass


class InvalidParameterError(ThinShellError):
    """A parameter is outside its documented range. Happens usually with the octree height `K`, the margin, solver
    tolerances, extraction resolution or simplification targets."""

    pass


class CellNotFoundError(ThinShellError):
    """The requested cell does not exist in the sparse voxel octree."""

    pass


class InvalidItsFile(ThinShellError):
    """
    The validation fails when loading an ITS file, either because the magic bytes or version do not match, or because
    the file is truncated.
    """

    pass


class MissingShellError(ThinShellError):
    """The operation requires the shell interval (eps1, eps2), but it was not computed for this field."""

    pass


class SpaceMismatchError(ThinShellError):
    """The mesh and the field do not live in the same coordinate space, for example a model-space mesh given where a
    unit-space mesh is expected."""

    pass
