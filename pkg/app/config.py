import json
import os
from pathlib import Path

from app.logger import logger, set_log_level
from utils.errors import ConfigurationError

# Path to configuration file
CONFIG_PATH = Path(os.path.dirname(os.path.abspath(__file__))) / '../config/config.json'

class ConfigManager:
    """
    Centralized configuration manager using Singleton pattern.

    This class manages the application configuration loaded from config.json.
    It ensures only one instance exists throughout the application lifecycle.
    """
    _instance = None
    _config = None
    _path = None

    def __new__(cls, path=None):
        """
        Create or return the singleton instance.

        Args:
            path (str or Path, optional): Configuration file. An explicit path
                other than the one already loaded forces a reload; without a
                path the active configuration is kept.

        Returns:
            ConfigManager: The singleton instance of ConfigManager.
        """
        if cls._instance is None:
            cls._instance = super(ConfigManager, cls).__new__(cls)
        return cls._instance

    def __init__(self, path=None):
        """Initialize the ConfigManager and load configuration if not already loaded."""
        if path is None:
            if self._config is None:
                self.load_config(CONFIG_PATH)
        elif self._config is None or Path(path) != self._path:
            self.load_config(Path(path))

    @classmethod
    def reset(cls):
        """Forget the loaded configuration (used by tests and the webhook service)."""
        cls._instance = None
        cls._config = None
        cls._path = None

    def load_config(self, path):
        """
        Load configuration from the JSON file.

        A missing file yields an empty configuration (built-in defaults apply).

        Args:
            path (Path): Configuration file to read.

        Raises:
            ConfigurationError: If the file contains invalid JSON.
        """
        type(self)._path = path
        try:
            with open(path, 'r', encoding='utf-8') as f:
                type(self)._config = json.load(f)
            logger.info(f"Configuration loaded from {path}")
        except FileNotFoundError:
            logger.warning(f"Configuration file not found: {path}, using defaults")
            type(self)._config = {}
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Error parsing configuration file {path}: {e}") from e

    def get_config(self):
        """
        Return the complete configuration.

        Returns:
            dict: The complete configuration dictionary.
        """
        return self._config

    def get_section(self, section):
        """
        Return a specific configuration section.

        Args:
            section (str): The name of the configuration section.

        Returns:
            dict: The requested configuration section or empty dict if not found.
        """
        return self._config.get(section, {})

class ScenarioConfig:
    """
    Scenario and solver parameters of one power-minimization run.

    Defaults reproduce the two-user simulation setup: 8 transmit antennas,
    6 receive antennas, 4 streams per user, rates 8.5 and 7.5 bits per
    channel use, step size 2 and stop threshold 1e-5.
    """

    def __init__(self, users=2, tx_antennas=8, rx_antennas=6, streams=(4, 4), rates=(8.5, 7.5),
                 samples=1000, step=2.0, gamma=1e-5, seed=1, max_outer_iters=100,
                 max_step_halvings=40, inner_tol=1e-8, max_inner_iters=500,
                 error_variance=None, noise_variance=1.0):
        """
        Initialize and validate a scenario.

        Args:
            users (int): Number of users K.
            tx_antennas (int): Base-station antennas N.
            rx_antennas (int): Antennas per user R.
            streams (list[int]): Streams per user d_k, length K.
            rates (list[float]): Target rates rho_k in bits per channel use, length K.
            samples (int): Monte Carlo channel realizations M.
            step (float): Initial step size s0 of the outer loop.
            gamma (float): Outer convergence threshold on the power decrease.
            seed (int): Seed of every random stream of the run.
            max_outer_iters (int): Cap on accepted outer iterations.
            max_step_halvings (int): Cap on step halvings within one outer iteration.
            inner_tol (float): Absolute tolerance on total power of the inner loop.
            max_inner_iters (int): Cap on inner alternating cycles.
            error_variance (float, optional): Scale of the channel error covariance
                (C_err = error_variance·I_N). Defaults to rx_antennas.
            noise_variance (float): Noise covariance scale (C_eta = noise_variance·I_R).

        Raises:
            ConfigurationError: If any value breaks the scenario invariants.
        """
        try:
            self.users = int(users)
            self.tx_antennas = int(tx_antennas)
            self.rx_antennas = int(rx_antennas)
            self.streams = tuple(int(d) for d in streams)
            self.rates = tuple(float(r) for r in rates)
            self.samples = int(samples)
            self.step = float(step)
            self.gamma = float(gamma)
            self.seed = int(seed)
            self.max_outer_iters = int(max_outer_iters)
            self.max_step_halvings = int(max_step_halvings)
            self.inner_tol = float(inner_tol)
            self.max_inner_iters = int(max_inner_iters)
            self.error_variance = float(self.rx_antennas if error_variance is None else error_variance)
            self.noise_variance = float(noise_variance)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"Invalid scenario value: {e}") from e
        self.validate()

    def validate(self):
        """
        Check the scenario invariants.

        Raises:
            ConfigurationError: On the first violated invariant.
        """
        if min(self.users, self.tx_antennas, self.rx_antennas) < 1:
            raise ConfigurationError("users, tx_antennas and rx_antennas must be >= 1")
        if len(self.streams) != self.users or len(self.rates) != self.users:
            raise ConfigurationError(f"streams and rates need one entry per user ({self.users})")
        limit = min(self.tx_antennas, self.rx_antennas)
        for k, d in enumerate(self.streams):
            if d < 1 or d > limit:
                raise ConfigurationError(f"User {k + 1}: {d} streams, allowed range is 1..{limit}")
        if any(r <= 0 for r in self.rates):
            raise ConfigurationError("Every target rate must be > 0")
        if self.samples < 1:
            raise ConfigurationError("samples must be >= 1")
        if self.step <= 0 or self.gamma <= 0 or self.inner_tol <= 0:
            raise ConfigurationError("step, gamma and inner_tol must be > 0")
        if self.max_outer_iters < 1 or self.max_step_halvings < 1 or self.max_inner_iters < 1:
            raise ConfigurationError("Iteration caps must be positive integers")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.error_variance < 0:
            raise ConfigurationError("error_variance must be >= 0")
        if self.noise_variance <= 0:
            raise ConfigurationError("noise_variance must be > 0")

    def to_dict(self):
        """
        Return the scenario as a plain dictionary (JSON friendly).

        Returns:
            dict: Constructor keyword arguments.
        """
        return {
            "users": self.users,
            "tx_antennas": self.tx_antennas,
            "rx_antennas": self.rx_antennas,
            "streams": list(self.streams),
            "rates": list(self.rates),
            "samples": self.samples,
            "step": self.step,
            "gamma": self.gamma,
            "seed": self.seed,
            "max_outer_iters": self.max_outer_iters,
            "max_step_halvings": self.max_step_halvings,
            "inner_tol": self.inner_tol,
            "max_inner_iters": self.max_inner_iters,
            "error_variance": self.error_variance,
            "noise_variance": self.noise_variance,
        }

    def replace(self, **overrides):
        """
        Return a copy with some fields overridden; None values are ignored.

        Returns:
            ScenarioConfig: New validated scenario.
        """
        values = self.to_dict()
        values.update({key: value for key, value in overrides.items() if value is not None})
        return ScenarioConfig(**values)

    def __str__(self):
        return (f"Scenario(K={self.users}, N={self.tx_antennas}, R={self.rx_antennas}, "
                f"d={list(self.streams)}, rho={list(self.rates)}, M={self.samples}, seed={self.seed})")

class ExperimentConfig:
    """
    Everything the harness needs beyond the scenario itself.
    """

    INIT_MODES = ("equal", "random")

    def __init__(self, scenario, output_dir="results", init="equal", validation_samples=None,
                 validation_seed=None, export_samples=True, checkpoint=True, samples_file=None):
        """
        Initialize an experiment configuration.

        Args:
            scenario (ScenarioConfig): Scenario to run.
            output_dir (str): Directory receiving every artifact file.
            init (str): Initial rate split, "equal" or "random".
            validation_samples (int, optional): Fresh samples for out-of-sample
                validation. Defaults to 5·M.
            validation_seed (int, optional): Seed of the validation samples.
                Defaults to a stream derived from the scenario seed.
            export_samples (bool): Write the channel sample archive.
            checkpoint (bool): Write a checkpoint after each accepted iteration.
            samples_file (str, optional): Replay samples from this archive.

        Raises:
            ConfigurationError: If the init mode or the validation sample count is invalid.
        """
        self.scenario = scenario
        self.output_dir = str(output_dir)
        self.init = str(init)
        self.validation_samples = int(validation_samples) if validation_samples is not None \
            else 5 * scenario.samples
        self.validation_seed = None if validation_seed is None else int(validation_seed)
        self.export_samples = bool(export_samples)
        self.checkpoint = bool(checkpoint)
        self.samples_file = samples_file

        if self.init not in self.INIT_MODES:
            raise ConfigurationError(f"init must be one of {self.INIT_MODES}, got {self.init!r}")
        if self.validation_samples < scenario.samples:
            raise ConfigurationError(f"validation_samples ({self.validation_samples}) must be >= "
                                     f"samples ({scenario.samples})")

    def replace(self, scenario=None, **overrides):
        """
        Return a copy with some fields overridden; None values are ignored.

        Returns:
            ExperimentConfig: New experiment configuration.
        """
        values = {
            "output_dir": self.output_dir,
            "init": self.init,
            "validation_samples": self.validation_samples,
            "validation_seed": self.validation_seed,
            "export_samples": self.export_samples,
            "checkpoint": self.checkpoint,
            "samples_file": self.samples_file,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        scenario = scenario or self.scenario
        if values["validation_samples"] < scenario.samples:
            values["validation_samples"] = 5 * scenario.samples
        return ExperimentConfig(scenario, **values)

class TelegramConfig:
    """
    Configuration class for Telegram notifications.

    This class holds the credentials and chat identifier used to report
    finished runs through the Telegram Bot API.
    """

    def __init__(self, token=None, chat_id=None):
        """
        Initialize Telegram configuration.

        Args:
            token (str): Bot token for Telegram API authentication.
            chat_id (str): Chat ID receiving run summaries.
        """
        self.token = token
        self.chat_id = chat_id

    @property
    def enabled(self):
        """True when both token and chat id are set to real values."""
        return bool(self.token) and bool(self.chat_id) and not str(self.token).startswith("your_")

class ApplicationConfig:
    """
    Main application configuration class.

    This class builds the typed configuration objects from config.json and
    serves as the central point for accessing all configuration data.
    """

    def __init__(self, path=None):
        """
        Initialize the application configuration.

        Args:
            path (str, optional): Configuration file, defaults to config/config.json.

        Raises:
            ConfigurationError: If any section holds invalid values.
        """
        self.config_manager = ConfigManager(path)
        self.general = self.config_manager.get_section('general')

        try:
            self.scenario = ScenarioConfig(**self.config_manager.get_section('scenario'))
            self.experiment = ExperimentConfig(self.scenario, **self.config_manager.get_section('experiment'))
        except TypeError as e:
            raise ConfigurationError(f"Unknown configuration key: {e}") from e

        telegram_config = self.config_manager.get_section('telegram')
        self.telegram = TelegramConfig(
            telegram_config.get('token'),
            telegram_config.get('chat_id')
        )

        self.log_level = self.general.get('log_level', 'INFO')
        set_log_level(self.log_level)

        logger.info(f"Configuration initialized: {self.scenario}")
        logger.info(f"Notifications: {'ENABLED' if self.telegram.enabled else 'DISABLED'}")
