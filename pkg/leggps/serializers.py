import re

import numpy as np
from rest_framework import serializers

from leggps.exceptions import LegError
from leggps.kernel import CeleriteTerm, LEGParams


class MatrixField(serializers.Field):
    """Row-major list of lists of numbers <-> 2-D float array."""

    default_error_messages = {
        'invalid': 'Expected a non-empty list of equal-length rows of numbers.',
        'non_finite': 'Matrix entries must be finite.',
    }

    def to_internal_value(self, data):
        try:
            value = np.array(data, dtype=float)
        except (TypeError, ValueError):
            self.fail('invalid')
        if value.ndim != 2 or value.size == 0:
            self.fail('invalid')
        if not np.isfinite(value).all():
            self.fail('non_finite')
        return value

    def to_representation(self, value):
        return np.asarray(value, dtype=float).tolist()


class ParamsSerializer(serializers.Serializer):
    N = MatrixField()
    R = MatrixField()
    B = MatrixField()
    Lambda = MatrixField()
    meta = serializers.DictField(required=False)

    def validate(self, data):
        """
        Check that the four matrices have consistent shapes.
        """
        try:
            data['params'] = LEGParams(data['N'], data['R'], data['B'], data['Lambda'])
        except (LegError, ValueError) as exc:
            raise serializers.ValidationError(str(exc))
        return data

    @classmethod
    def from_params(cls, p: LEGParams, meta=None):
        payload = {'N': p.N, 'R': p.R, 'B': p.B, 'Lambda': p.Lambda}
        if meta:
            payload['meta'] = meta
        return cls(instance=payload)


class RangeField(serializers.CharField):
    """``t0:t1:step`` (both ends included) or a comma-separated list of times."""

    default_error_messages = {
        'invalid_range': 'Expected "t0:t1:step" with step > 0 and t1 >= t0, or "t1,t2,...".',
    }

    def to_internal_value(self, data):
        text = super().to_internal_value(data).strip()
        try:
            if ':' in text:
                t0, t1, step = (float(part) for part in text.split(':'))
                if not (step > 0 and t1 >= t0):
                    self.fail('invalid_range')
                count = int(np.floor((t1 - t0) / step + 1e-9)) + 1
                return t0 + step * np.arange(count)
            values = np.array([float(part) for part in text.split(',') if part.strip()])
        except ValueError:
            self.fail('invalid_range')
        if len(values) == 0 or not np.isfinite(values).all():
            self.fail('invalid_range')
        return values


class SizesField(serializers.CharField):
    """``2^a..2^b`` (every power of two in between) or a comma-separated list."""

    default_error_messages = {
        'invalid_sizes': 'Expected "2^a..2^b" or a comma-separated list of positive integers.',
    }
    pattern = re.compile(r'^\s*2\^(\d+)\s*\.\.\s*2\^(\d+)\s*$')

    def to_internal_value(self, data):
        text = super().to_internal_value(data)
        match = self.pattern.match(text)
        if match:
            lo, hi = int(match.group(1)), int(match.group(2))
            if hi < lo:
                self.fail('invalid_sizes')
            return [2 ** k for k in range(lo, hi + 1)]
        try:
            sizes = [int(part) for part in text.split(',') if part.strip()]
        except ValueError:
            self.fail('invalid_sizes')
        if not sizes or min(sizes) < 2:
            self.fail('invalid_sizes')
        return sizes


class NumberTupleField(serializers.CharField):
    """Comma-separated floats of a fixed arity, e.g. ``a,b,c,d``."""

    def __init__(self, arity, **kwargs):
        self.arity = arity
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        text = super().to_internal_value(data)
        try:
            values = tuple(float(part) for part in text.split(','))
        except ValueError:
            raise serializers.ValidationError(f'Expected {self.arity} comma-separated numbers.')
        if len(values) != self.arity or not np.isfinite(values).all():
            raise serializers.ValidationError(f'Expected {self.arity} comma-separated numbers.')
        return values


class CommonOptionsSerializer(serializers.Serializer):
    threads = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    jitter = serializers.FloatField(min_value=0.0, required=False, allow_null=True)


class FitOptionsSerializer(CommonOptionsSerializer):
    rank = serializers.IntegerField(min_value=1)
    max_iter = serializers.IntegerField(min_value=1, default=200)
    grad_tol = serializers.FloatField(min_value=0.0, default=1e-6)
    seed = serializers.IntegerField(min_value=0, default=0)
    restarts = serializers.IntegerField(min_value=1, default=1)
    diag_lambda = serializers.BooleanField(default=False)


class PredictOptionsSerializer(CommonOptionsSerializer):
    targets = RangeField(required=False, allow_null=True)
    band = serializers.ChoiceField(choices=['predictive', 'latent'])


class SimulateOptionsSerializer(CommonOptionsSerializer):
    times = RangeField()
    seed = serializers.IntegerField(min_value=0, default=0)


class ConvertOptionsSerializer(CommonOptionsSerializer):
    noise = serializers.FloatField(min_value=0.0, default=0.0)
    celerite = serializers.ListField(child=NumberTupleField(4), required=False, default=list)
    sm = serializers.ListField(child=NumberTupleField(4), required=False, default=list)

    def validate(self, data):
        """
        Exactly one kernel family, with at least one term.
        """
        if bool(data['celerite']) == bool(data['sm']):
            raise serializers.ValidationError('Give one or more --celerite terms or --sm terms (not both).')
        for a, b, c, d in data['celerite']:
            data.setdefault('terms', []).append(CeleriteTerm(a, b, c, d))
        for re_b, im_b, mu, gamma in data['sm']:
            if not gamma > 0:
                raise serializers.ValidationError('SM gamma must be positive.')
            data.setdefault('components', []).append((complex(re_b, im_b), mu, gamma))
        return data


class BenchOptionsSerializer(CommonOptionsSerializer):
    rank = serializers.IntegerField(min_value=1, default=3)
    sizes = SizesField()
    repeats = serializers.IntegerField(min_value=1, default=5)
    seed = serializers.IntegerField(min_value=0, default=0)
