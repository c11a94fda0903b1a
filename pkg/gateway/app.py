"""
The admin API.
Provides HTTP endpoints to inspect and steer a running gateway: brokers,
sensor agents and clusters, contexts and rules, the simulated broker and
the run statistics.
"""
from typing import Optional

from flask import Flask, Blueprint, g
from flask_cors import CORS

from gateway.daemon import Gateway
from gateway.errors import GatewayError

from gateway.api import error_response
from gateway.api.debug import DEBUG_API
from gateway.api.broker import BROKER_API
from gateway.api.device import DEVICE_API
from gateway.api.sim import SIM_API
from gateway.api.context import CONTEXT_API


########################################################################################
# Middleware                                                                           #
########################################################################################
middleware: list[Blueprint] = [DEBUG_API, BROKER_API, DEVICE_API, SIM_API, CONTEXT_API]


#######################################################################################
# App Config                                                                          #
#######################################################################################
def create_app(gateway: Optional[Gateway] = None) -> Flask:
    """
    Build the admin app around `gateway` (a fresh, started one if omitted).
    """
    app: Flask = Flask(__name__)
    CORS(app=app)
    if gateway is None:
        gateway = Gateway().start()

    @app.before_request
    def inject_singleton():
        """
        This injects the gateway into the request context before requests.
        """
        g.gateway = gateway

    app.register_error_handler(GatewayError, error_response)
    with app.app_context():
        # Files are stored within api/*.py.
        for api in middleware:
            app.register_blueprint(api)
    return app


if __name__ == "__main__":
    create_app().run(host="127.0.0.1", port=5000, debug=True)
