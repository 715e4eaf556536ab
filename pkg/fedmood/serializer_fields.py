import math

from rest_framework import serializers

INFINITY_NAMES = ("inf", "infinity", "+inf")


class BoundField(serializers.FloatField):
    """
    A positive float that may also be unbounded.

    Accepts ``"inf"`` (or ``null`` when ``allow_null`` isn't set) for infinity
    and represents infinity as ``"inf"``.
    """

    default_error_messages = {"not_positive": "Ensure this value is positive."}

    def to_representation(self, value):
        if value is not None and math.isinf(value):
            return "inf"
        return super().to_representation(value)

    def to_internal_value(self, data):
        if isinstance(data, str) and data.strip().lower() in INFINITY_NAMES:
            return math.inf
        if isinstance(data, float) and math.isinf(data) and data > 0:
            return math.inf
        value = super().to_internal_value(data)
        if not value > 0:
            self.fail("not_positive")
        return value

    def validate_empty_values(self, data):
        if data is None and not self.allow_null:
            return True, math.inf
        return super().validate_empty_values(data)


class SizesField(serializers.ListField):
    """
    Hidden layer sizes, given as a list or a comma separated string.
    """

    child = serializers.IntegerField(min_value=1)

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [size for size in data.split(",") if size.strip()]
        return super().to_internal_value(data)
