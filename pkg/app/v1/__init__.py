from flask import Flask


def init_v1_app(app: Flask):
    """Initialize V1 application components."""

    from .runs.routes import bp as runs_bp
    from .cover.routes import bp as cover_bp
    from .oracle.routes import bp as oracle_bp
    from .common.json_utils import compress_json

    # Flask-RESTX handles the /v1 prefix itself
    app.register_blueprint(runs_bp)
    app.register_blueprint(cover_bp)
    app.register_blueprint(oracle_bp)

    for endpoint in app.view_functions:
        if endpoint.startswith('v1_'):
            app.view_functions[endpoint] = compress_json(app.view_functions[endpoint])
