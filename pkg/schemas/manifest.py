from marshmallow import Schema, ValidationError, fields, validate, validates_schema

from services.augmentation_service import TRANSFORMS
from services.segmentation_service import GENRES, ORIGINAL

MANIFEST_VERSION = 1


class CorpusRecordSchema(Schema):
    """First manifest line: corpus-level provenance"""
    record = fields.Str(required=True, validate=validate.Equal("corpus"))
    version = fields.Int(load_default=MANIFEST_VERSION, validate=validate.Equal(MANIFEST_VERSION))
    seed = fields.Int(allow_none=True, load_default=None)
    augmentation_digest = fields.Str(allow_none=True, load_default=None)


class TrackRecordSchema(Schema):
    """One audio file in the corpus"""
    record = fields.Str(required=True, validate=validate.Equal("track"))
    track_id = fields.Str(required=True, validate=validate.Length(min=1))
    path = fields.Str(required=True, validate=validate.Length(min=1))
    genre = fields.Str(required=True, validate=validate.OneOf(GENRES))
    genre_index = fields.Int(required=True, validate=validate.Range(min=0, max=len(GENRES) - 1))
    duration_samples = fields.Int(required=True, validate=validate.Range(min=0))
    origin = fields.Str(required=True, validate=validate.Length(min=1))
    transform = fields.Str(load_default=ORIGINAL, validate=validate.OneOf((ORIGINAL,) + TRANSFORMS))
    parameter = fields.Float(allow_none=True, load_default=None)

    @validates_schema
    def validate_consistency(self, data, **kwargs):
        if GENRES[data["genre_index"]] != data["genre"]:
            raise ValidationError(f"genre {data['genre']!r} does not match index {data['genre_index']}")
        if data.get("transform", ORIGINAL) == ORIGINAL and data["origin"] != data["track_id"]:
            raise ValidationError("Original tracks must be their own origin.")
        if data.get("transform", ORIGINAL) != ORIGINAL and data["origin"] == data["track_id"]:
            raise ValidationError("Augmented tracks must reference a different origin.")
