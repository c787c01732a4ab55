import hashlib
import json
from typing import Any, Dict

from marshmallow import RAISE, Schema, ValidationError, fields, validate, validates

from services.model_zoo import ARCHITECTURE_NAMES


class RunConfigSchema(Schema):
    """Flat run configuration shared by the train / evaluate / augment verbs"""

    class Meta:
        unknown = RAISE

    arch = fields.Str(load_default="resnet1d", validate=validate.OneOf(ARCHITECTURE_NAMES))
    augment = fields.Bool(load_default=False)
    seed = fields.Int(load_default=0, validate=validate.Range(min=0))
    max_epochs = fields.Int(load_default=100, validate=validate.Range(min=1))
    batch_size = fields.Int(load_default=80, validate=validate.Range(min=1))
    patience = fields.Int(load_default=10, validate=validate.Range(min=1))
    learning_rate = fields.Float(load_default=1e-3, validate=validate.Range(min=0, min_inclusive=False))
    beta1 = fields.Float(load_default=0.9, validate=validate.Range(min=0, max=1, max_inclusive=False))
    beta2 = fields.Float(load_default=0.999, validate=validate.Range(min=0, max=1, max_inclusive=False))
    adam_epsilon = fields.Float(load_default=1e-8, validate=validate.Range(min=0, min_inclusive=False))
    rounds = fields.List(fields.Int(validate=validate.OneOf((1, 2, 3))), load_default=lambda: [1, 2, 3],
                         validate=validate.Length(min=1, max=3))
    loudness_target = fields.Float(load_default=-23.0, validate=validate.Range(max=0))
    strict = fields.Bool(load_default=True)

    @validates("rounds")
    def validate_rounds(self, value, **kwargs):
        if len(set(value)) != len(value):
            raise ValidationError("Rounds must not repeat.")


def load_run_config(raw: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate a run configuration and fill defaults
    Raises:
        ValidationError: unknown keys or out-of-range values
    """
    return RunConfigSchema().load(raw)


def config_digest(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical (sorted, compact) JSON form."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
