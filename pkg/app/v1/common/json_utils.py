import gzip
from functools import wraps
from typing import Any, Dict, Tuple

from flask import make_response, request
from flask_restx import Api

from ...errors import ConfigError, InvariantViolation, OracleBudgetExceeded, ShardSimError, UsageError


def compress_json(f):
    """Decorator to gzip JSON responses when the client accepts gzip."""
    @wraps(f)
    def wrapped(*args, **kwargs):
        resp = make_response(f(*args, **kwargs))
        if resp.mimetype != 'application/json' or resp.direct_passthrough:
            return resp
        if 'gzip' not in request.accept_encodings:
            return resp

        resp.set_data(gzip.compress(resp.get_data()))
        resp.headers['Content-Encoding'] = 'gzip'
        resp.vary.add('Accept-Encoding')
        return resp
    return wrapped


def error_body(message: str, status: int) -> Tuple[Dict[str, Any], int]:
    return {'error': message, 'status': status}, status


def register_error_handlers(api: Api) -> None:
    """Library errors as {'error', 'status'} bodies: bad input 400, failed invariants 500."""

    @api.errorhandler(ConfigError)
    @api.errorhandler(UsageError)
    @api.errorhandler(OracleBudgetExceeded)
    def bad_input(error: ShardSimError):
        return error_body(str(error), 400)

    @api.errorhandler(InvariantViolation)
    def invariant_failed(error: InvariantViolation):
        return error_body(f'Invariant violated: {error}', 500)
