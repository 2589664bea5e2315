import networkx as nx
from flask import Blueprint, request
from flask_restx import Api, Resource, fields

from ...oracle import greedy_vs_optimal, max_degree
from ..common.json_utils import register_error_handlers

bp = Blueprint('v1_oracle_api', __name__)
api = Api(bp,
          title='Shardsim V1 Oracle API',
          version='1.0',
          description='''
# Shardsim V1 Oracle API

## Overview
Compare incremental greedy coloring with the exact chromatic number on a small conflict graph.

## How to Use
POST `/v1/oracle/compare` with `{"edges": [[0, 1], [1, 2]], "order": [2, 0, 1]}`.
`order` is the arrival order (default: sorted vertices); `vertices` may list isolated vertices.
Graphs above the oracle vertex budget (SHARDSIM_ORACLE_BUDGET, default 20) are rejected with 400.

## Response Format
Greedy color count, chromatic number and maximum degree.
          ''',
          doc='/v1/oracle/docs/',
          prefix='/v1')
register_error_handlers(api)

compare_model = api.model('OracleCompare', {
    'vertices': fields.Integer(description='Number of vertices'),
    'edges': fields.Integer(description='Number of edges'),
    'greedy': fields.Integer(description='Colors used by incremental greedy over the order'),
    'chi': fields.Integer(description='Exact chromatic number'),
    'max_degree': fields.Integer(description='Maximum vertex degree'),
})


@api.route('/oracle/compare')
class OracleCompareResource(Resource):
    @api.doc('oracle_compare',
             description='Greedy color count against the chromatic number',
             responses={
                 200: 'Success - Returns both counts',
                 400: 'Malformed graph or over the vertex budget'
             })
    @api.marshal_with(compare_model)
    def post(self):
        """Compare greedy coloring with the optimum."""
        data = request.get_json(silent=True) or {}
        edges = data.get('edges')
        if not isinstance(edges, list):
            api.abort(400, "'edges' must be a list of [u, v] pairs")

        graph = nx.Graph()
        graph.add_nodes_from(data.get('vertices') or [])
        try:
            graph.add_edges_from((u, v) for u, v in edges)
        except (TypeError, ValueError):
            api.abort(400, "'edges' must be a list of [u, v] pairs")
        if any(u == v for u, v in graph.edges):
            api.abort(400, 'Self loops are not allowed')

        order = data.get('order') or sorted(graph.nodes, key=str)
        greedy, chi = greedy_vs_optimal(graph, order)
        return {
            'vertices': graph.number_of_nodes(),
            'edges': graph.number_of_edges(),
            'greedy': greedy,
            'chi': chi,
            'max_degree': max_degree(graph),
        }
