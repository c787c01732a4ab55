from marshmallow import Schema, fields, validate

from services.model_zoo import ARCHITECTURE_NAMES

_UNIT = validate.Range(min=0.0, max=1.0)


class RoundMetricsSchema(Schema):
    """One CSV / JSON metrics row"""
    architecture = fields.Str(required=True, validate=validate.OneOf(ARCHITECTURE_NAMES))
    augmentation = fields.Bool(required=True)
    round = fields.Int(required=True, validate=validate.OneOf((1, 2, 3)))
    segment_acc = fields.Float(required=True, validate=_UNIT)
    track_acc_majority = fields.Float(required=True, validate=_UNIT)
    track_acc_sum = fields.Float(required=True, validate=_UNIT)
    epochs = fields.Int(required=True, validate=validate.Range(min=1))
    best_epoch = fields.Int(required=True, validate=validate.Range(min=0))


class MeanStdSchema(Schema):
    mean = fields.Float(required=True)
    std = fields.Float(required=True, validate=validate.Range(min=0.0))


class SummarySchema(Schema):
    segment_acc = fields.Nested(MeanStdSchema, required=True)
    track_acc_majority = fields.Nested(MeanStdSchema, required=True)
    track_acc_sum = fields.Nested(MeanStdSchema, required=True)


class PredictionOutputSchema(Schema):
    """Output of the predict verb"""
    track_id = fields.Str(required=True)
    genre_label = fields.Int(allow_none=True)
    predictions = fields.Dict(keys=fields.Str(validate=validate.OneOf(("majority", "sum"))), values=fields.Str())
    prediction_indices = fields.Dict(keys=fields.Str(), values=fields.Int())
    probabilities = fields.List(fields.List(fields.Float()), validate=validate.Length(equal=21))
