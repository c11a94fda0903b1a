"""
Edge gateway for MQTT and CoAP sensor networks.

Run it with `python -m gateway run gateway.toml`; see cli.py for the other
commands and app.py for the admin API.
"""
