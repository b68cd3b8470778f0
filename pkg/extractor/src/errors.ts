export class ExtractorError extends Error {}

/** Input image could not be parsed. */
export class ImageDecodeFailure extends ExtractorError {}

/** Configuration or tensor shapes violate the bundle invariants. */
export class ShapeMismatch extends ExtractorError {}
