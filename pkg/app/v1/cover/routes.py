from flask import Blueprint, request
from flask_restx import Api, Resource, fields

from ...cover import build_hierarchy, dump_hierarchy, verify_cover
from ...errors import ConfigError
from ...shard_graph import build_graph
from ..common.json_utils import register_error_handlers

bp = Blueprint('v1_cover_api', __name__)
api = Api(bp,
          title='Shardsim V1 Cover API',
          version='1.0',
          description='''
# Shardsim V1 Cover API

## Overview
Build the layered cluster cover of a shard topology and check its properties.

## How to Use
POST `/v1/cover/verify` with a topology section, e.g. `{"kind": "line", "s": 16}`.
Optional keys: `c_diam`, `c_sub` (both default 4) and `seed` for random metrics.

## Response Format
`report` holds one entry per checked property (partition, strong diameter, membership,
containment, leader rule); `clusters` lists every cluster with its height, leader and members.
          ''',
          doc='/v1/cover/docs/',
          prefix='/v1')
register_error_handlers(api)

cover_model = api.model('CoverReport', {
    's': fields.Integer(description='Number of shards'),
    'diameter': fields.Integer(description='Shard graph diameter'),
    'layers': fields.Integer(description='Number of layers'),
    'sublayers': fields.Integer(description='Largest sublayer count'),
    'passed': fields.Boolean(description='Every property holds'),
    'report': fields.Raw(description='Per-property results'),
    'clusters': fields.Raw(description='Cluster records'),
})


@api.route('/cover/verify')
class CoverVerifyResource(Resource):
    @api.doc('verify_cover',
             description='Build and verify a cover hierarchy',
             responses={
                 200: 'Success - Returns the report and clusters',
                 400: 'Invalid topology'
             })
    @api.marshal_with(cover_model)
    def post(self):
        """Verify the cover of a topology."""
        data = request.get_json(silent=True)
        if not isinstance(data, dict):
            api.abort(400, 'Request body must be a JSON topology object')
        topology = dict(data)
        try:
            c_diam = int(topology.pop('c_diam', 4))
            c_sub = int(topology.pop('c_sub', 4))
        except (TypeError, ValueError):
            raise ConfigError('c_diam and c_sub must be integers')
        seed = topology.pop('seed', 0)

        graph = build_graph(topology, seed=seed)
        hierarchy = build_hierarchy(graph, c_diam, c_sub)
        report = verify_cover(hierarchy, graph)
        return {
            's': graph.s,
            'diameter': graph.diameter,
            'layers': hierarchy.h1,
            'sublayers': hierarchy.h2,
            'passed': report.passed,
            'report': report.to_dict(),
            'clusters': dump_hierarchy(hierarchy),
        }
