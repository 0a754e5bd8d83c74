import os
import sys
import threading

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from flask import Flask, request, jsonify
from app.logger import logger
from app.config import ApplicationConfig
from utils.errors import PowerMinError

app = Flask(__name__)

app_config = None
experiment_lock = threading.Lock()  # One experiment at a time

def get_app_config():
    """
    Load the application configuration on first use.

    Returns:
        ApplicationConfig: The shared configuration.
    """
    global app_config
    if app_config is None:
        app_config = ApplicationConfig(os.environ.get("POWERMIN_CONFIG"))
    return app_config

def build_experiment(config, data):
    """
    Apply the overrides of a webhook body to the configured experiment.

    Args:
        config (ApplicationConfig): Base configuration.
        data (dict): {"scenario": {...}, "experiment": {...}} overrides.

    Returns:
        ExperimentConfig: Validated experiment configuration.
    """
    scenario = config.scenario.replace(**data.get("scenario", {}))
    return config.experiment.replace(scenario=scenario, **data.get("experiment", {}))

@app.route('/webhook/experiment', methods=['POST'])
def experiment_webhook():
    """
    Handle experiment requests.

    The JSON body carries optional "scenario" and "experiment" override
    sections. Requests are processed one at a time; a request arriving
    while an experiment runs waits for the lock.

    Returns:
        tuple: JSON response and HTTP status code.
    """
    logger.debug('Experiment webhook received on /webhook/experiment')
    data = request.get_json(silent=True)
    if data is None:
        logger.debug('No JSON data received reading experiment webhook')
        return jsonify({"error": "No JSON data received"}), 400

    # Import here to avoid loading the numerical stack at import time
    from logics.harness_logic import ExperimentLogic
    from utils.telegram_notifier import TelegramNotifier

    try:
        config = get_app_config()
        experiment = build_experiment(config, data)
    except (PowerMinError, TypeError) as e:
        logger.error(f"Rejected experiment request: {e}")
        return jsonify({"error": str(e)}), 400

    with experiment_lock:
        logger.info(f"Processing experiment request: {experiment.scenario}")
        notifier = TelegramNotifier(config.telegram) if config.telegram.enabled else None
        try:
            result = ExperimentLogic(experiment, notifier).run_experiment()
        except PowerMinError as e:
            logger.error(f"Experiment failed: {e}")
            return jsonify({"error": str(e)}), 500

    return jsonify(result.to_dict()), 200

def start_server():
    """Start the Flask server to listen for experiment requests."""
    app.run(host=os.environ.get("POWERMIN_HOST", "0.0.0.0"),
            port=int(os.environ.get("POWERMIN_PORT", 4343)))

if __name__ == "__main__":
    start_server()
