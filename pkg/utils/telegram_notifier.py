"""
Telegram Notification Manager

This module sends a short HTML summary of every finished experiment to a
Telegram chat through the Bot API. Notification failures are logged and
never affect the outcome of a run.

Classes:
    TelegramNotifier: Main class for handling Telegram notifications
"""

import requests

from app.logger import logger

STATUS_ICONS = {
    "converged": "✅",
    "stalled": "⚠️",
    "infeasible": "❌",
}

class TelegramNotifier:
    """
    Class for handling Telegram notifications

    Attributes:
        telegram_config: Telegram-specific configuration
        token: Telegram bot token
        chat_id: Chat ID receiving the summaries
        send_message_url: URL for sending text messages
    """

    def __init__(self, telegram_config, timeout=10):
        """
        Initialize the Telegram notifier

        Args:
            telegram_config (TelegramConfig): Token and chat id.
            timeout (float): Request timeout in seconds.
        """
        self.telegram_config = telegram_config
        self.token = telegram_config.token
        self.chat_id = telegram_config.chat_id
        self.timeout = timeout

        # Base URL for Telegram API
        self.base_url = f"https://api.telegram.org/bot{self.token}"
        self.send_message_url = f"{self.base_url}/sendMessage"

    def format_run_summary(self, result, scenario, validation=None):
        """
        Build the HTML summary of a run.

        Args:
            result (ExperimentResult): Outcome of the run.
            scenario (ScenarioConfig): Scenario that was run.
            validation (ValidationReport, optional): Out-of-sample check.

        Returns:
            str: Message text.
        """
        icon = STATUS_ICONS.get(result.status, "ℹ️")
        message = f"{icon} <b>Power minimization {result.status}</b>\n"
        message += f"    · Scenario: <i>{scenario}</i>\n"
        message += f"    · Output: <code>{result.output_dir}</code>\n"
        if result.total_power_db is not None:
            message += f"    · Iterations: {result.iterations}\n"
            message += f"    · Total power: {result.total_power_db:.4f} dB\n"
        if validation is not None:
            margins = ", ".join(f"{m:+.4f}" for m in validation.rate_margin)
            message += f"    · Rate margins (bits): {margins}\n"
        return message

    def send_run_summary(self, result, scenario, validation=None):
        """
        Send the summary of a finished run.

        Args:
            result (ExperimentResult): Outcome of the run.
            scenario (ScenarioConfig): Scenario that was run.
            validation (ValidationReport, optional): Out-of-sample check.
        """
        self.send_message(self.format_run_summary(result, scenario, validation), parse_mode=True)

    def send_message(self, message, parse_mode=False):
        """
        Send a text message to Telegram

        Args:
            message: Text message to send
            parse_mode: Boolean indicating whether to use HTML parsing

        Returns:
            bool: True when Telegram accepted the message.
        """
        try:
            params = {
                'chat_id': self.chat_id,
                'text': message,
                'disable_web_page_preview': True
            }

            if parse_mode:
                params['parse_mode'] = 'HTML'

            response = requests.post(self.send_message_url, data=params, timeout=self.timeout)
            response.raise_for_status()

            logger.debug(f"Message sent to Telegram: {message[:100]}...")
            return True

        except requests.RequestException as e:
            logger.error(f"Error sending message to Telegram: {e}")
            return False
