import json
from typing import Any, Dict, List

from flask import Blueprint, request
from flask_restx import Api, Resource, fields

from ...config import build_config, datum_dir
from ...harness import execute
from ..common.json_utils import register_error_handlers

bp = Blueprint('v1_runs_api', __name__)
api = Api(bp,
          title='Shardsim V1 Runs API',
          version='1.0',
          description='''
# Shardsim V1 Runs API

## Overview
Run the shard scheduling simulator on a configuration and get its verdicts and aggregates back.

## How to Use
1. **List bundled configurations**: GET `/v1/configs`
2. **Fetch one**: GET `/v1/configs/{name}`
3. **Run**: POST `/v1/runs` with a configuration object, optionally with `seed`

## Configuration
Sections `topology`, `workload`, `scheduler`, `delay`, `output` plus `horizon` and `seed`.
Missing keys take their defaults; unknown keys are rejected with 400.

## Response Format
Config echo, per-verdict results, trace hash, latency and message aggregates, snapshot ratio extremes.
Ratios are measured against a certified lower bound, so they over-estimate the true ratio.
          ''',
          doc='/v1/docs/',
          prefix='/v1')
register_error_handlers(api)

verdict_model = api.model('Verdict', {
    'name': fields.String(description='Verdict name'),
    'passed': fields.Boolean(description='Whether the check passed'),
    'message': fields.String(description='First failure, empty on success'),
    'details': fields.Raw(description='Failure details'),
})

run_summary_model = api.model('RunSummary', {
    'config': fields.Raw(description='Effective configuration'),
    'config_digest': fields.String(description='Short digest of the configuration'),
    'algorithm': fields.String(description='a1, a2, a3 or a4'),
    'trace_hash': fields.String(description='SHA-256 of the canonical trace'),
    'passed': fields.Boolean(description='All verdicts passed'),
    'verdicts': fields.Raw(description='Verdicts by name'),
    'aggregates': fields.Raw(description='Latency, throughput and message counts'),
    'snapshots': fields.Integer(description='Number of snapshots measured'),
    'max_ratio': fields.Float(description='Largest snapshot ratio'),
    'mean_ratio': fields.Float(description='Mean snapshot ratio'),
    'lb_violations': fields.Integer(description='Snapshots with ratio below 1'),
    'ratio_note': fields.String(description='How ratios are measured'),
    'instance': fields.Raw(description='Reduction instance metadata, if any'),
    'quiescent': fields.Boolean(description='Run ended with an empty event queue'),
})

config_list_model = api.model('ConfigList', {
    'configs': fields.List(fields.String, description='Bundled configuration names'),
})


def _config_files() -> Dict[str, Any]:
    directory = datum_dir() / 'configs'
    if not directory.is_dir():
        return {}
    return {path.stem: path for path in sorted(directory.glob('*.json'))}


@api.route('/runs')
class RunResource(Resource):
    @api.doc('run',
             description='Simulate one configuration to quiescence',
             responses={
                 200: 'Success - Returns the run summary',
                 400: 'Invalid configuration',
                 500: 'A protocol invariant was violated during the run'
             })
    @api.marshal_with(run_summary_model)
    def post(self):
        """Run a configuration."""
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            api.abort(400, 'Request body must be a JSON configuration object')
        seed = data.pop('seed', None)
        config = build_config(data, seed=seed)
        return execute(config).to_summary()


@api.route('/configs')
class ConfigListResource(Resource):
    @api.doc('list_configs', description='Names of the bundled configurations')
    @api.marshal_with(config_list_model)
    def get(self):
        """List bundled configurations."""
        names: List[str] = list(_config_files())
        return {'configs': names}


@api.route('/configs/<string:name>')
class ConfigResource(Resource):
    @api.doc('get_config',
             description='One bundled configuration',
             params={'name': 'Configuration name without extension'},
             responses={
                 200: 'Success - Returns the configuration',
                 404: 'Configuration not found'
             })
    def get(self, name):
        """Get a bundled configuration."""
        path = _config_files().get(name)
        if path is None:
            api.abort(404, f"Configuration '{name}' not found")
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
