from unittest.mock import MagicMock

import requests

from app.config import ScenarioConfig, TelegramConfig
from logics.harness_logic import ExperimentResult
from utils.telegram_notifier import TelegramNotifier

def make_notifier():
    return TelegramNotifier(TelegramConfig("123:abc", "42"), timeout=3)

def converged_result():
    return ExperimentResult(status="converged", exit_code=0, output_dir="results/run",
                            total_power_db=12.3456789, iterations=7, rate_margin=(0.01, 0.2))

def test_summary_contains_the_outcome():
    message = make_notifier().format_run_summary(converged_result(), ScenarioConfig())
    assert "Power minimization converged" in message
    assert "12.3457 dB" in message
    assert "Iterations: 7" in message
    assert "results/run" in message

def test_infeasible_summary_has_no_power_line():
    result = ExperimentResult(status="infeasible", exit_code=3, output_dir="out")
    message = make_notifier().format_run_summary(result, ScenarioConfig())
    assert "❌" in message and "Total power" not in message

def test_message_is_posted_to_the_bot_api(monkeypatch):
    post = MagicMock()
    monkeypatch.setattr("utils.telegram_notifier.requests.post", post)
    assert make_notifier().send_message("hello", parse_mode=True)
    url = post.call_args.args[0]
    data = post.call_args.kwargs["data"]
    assert url == "https://api.telegram.org/bot123:abc/sendMessage"
    assert data["chat_id"] == "42" and data["parse_mode"] == "HTML"
    assert post.call_args.kwargs["timeout"] == 3

def test_request_failures_are_swallowed(monkeypatch):
    post = MagicMock(side_effect=requests.ConnectionError("offline"))
    monkeypatch.setattr("utils.telegram_notifier.requests.post", post)
    assert not make_notifier().send_message("hello")

def test_http_errors_are_swallowed(monkeypatch):
    response = MagicMock()
    response.raise_for_status.side_effect = requests.HTTPError("401")
    monkeypatch.setattr("utils.telegram_notifier.requests.post", MagicMock(return_value=response))
    assert not make_notifier().send_message("hello")

def test_run_summary_uses_html(monkeypatch):
    post = MagicMock()
    monkeypatch.setattr("utils.telegram_notifier.requests.post", post)
    make_notifier().send_run_summary(converged_result(), ScenarioConfig())
    assert post.call_args.kwargs["data"]["parse_mode"] == "HTML"
