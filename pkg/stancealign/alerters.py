"""Notifications for failed experiment-matrix cells.

``details`` is the cell's ``failure`` record: dataset, method, unit, group,
config hash, error type and message.
"""
import json
import os
import sys
import urllib.request
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple

FIELD_LABELS = (
    ("dataset", "Dataset"),
    ("method", "Method"),
    ("unit_id", "Unit"),
    ("group", "Group"),
    ("bias", "Bias"),
    ("config_hash", "Config"),
)


def failure_fields(details: Dict[str, Any]) -> List[Tuple[str, str]]:
    """(label, value) pairs of the failure record that are set, in display order."""
    fields = []
    for key, label in FIELD_LABELS:
        value = details.get(key)
        if value in (None, ""):
            continue
        if key == "config_hash":
            value = str(value)[:12]
        fields.append((label, str(value)))
    return fields


def failure_summary(message: str, details: Dict[str, Any]) -> str:
    error_type = details.get("error_type")
    failure = details.get("message") or message
    return f"{error_type}: {failure}" if error_type else failure


class Alerter(ABC):
    @abstractmethod
    def alert(self, message: str, cell: str, details: Dict[str, Any]) -> None:
        pass


class StderrAlerter(Alerter):
    def alert(self, message: str, cell: str, details: Dict[str, Any]) -> None:
        print(f"WARNING: {message}", file=sys.stderr)
        print(f"Cell: {cell}", file=sys.stderr)
        for label, value in failure_fields(details):
            print(f"  {label}: {value}", file=sys.stderr)


class SlackAlerter(Alerter):
    def __init__(self, webhook_url: Optional[str] = None, channel: Optional[str] = None, token: Optional[str] = None):
        # webhook_url wins over token
        self.webhook_url = webhook_url or os.getenv("STANCEALIGN_SLACK_WEBHOOK_URL")
        self.token = token or os.getenv("STANCEALIGN_SLACK_BOT_TOKEN")
        self.channel = channel or os.getenv("STANCEALIGN_SLACK_CHANNEL")

        if self.webhook_url:
            self.client = None
        else:
            if not self.token:
                raise ValueError("Either STANCEALIGN_SLACK_WEBHOOK_URL or STANCEALIGN_SLACK_BOT_TOKEN must be provided")
            if not self.channel:
                raise ValueError("STANCEALIGN_SLACK_CHANNEL must be provided when using bot token")
            self.client = self._import_slack_sdk()

    def _import_slack_sdk(self):
        """Import slack SDK and create client"""
        try:
            from slack_sdk import WebClient
            return WebClient(token=self.token)
        except ImportError:
            raise ImportError("slack-sdk package is required for bot token authentication. Install with: pip install stancealign[slack]")

    def build_blocks(self, message: str, cell: str, details: Dict[str, Any]) -> List[Dict[str, Any]]:
        """Block Kit layout: header, the failing cell and error, then one field per record entry."""
        blocks: List[Dict[str, Any]] = [
            {"type": "header", "text": {"type": "plain_text", "text": "Matrix cell failed"}},
            {
                "type": "section",
                "text": {"type": "mrkdwn", "text": f"`{cell}`\n>{failure_summary(message, details)}"},
            },
        ]
        fields = [{"type": "mrkdwn", "text": f"*{label}*\n{value}"} for label, value in failure_fields(details)]
        # Slack caps a section at 10 fields
        for start in range(0, len(fields), 10):
            blocks.append({"type": "section", "fields": fields[start:start + 10]})
        return blocks

    def _post_webhook(self, text: str, blocks: List[Dict[str, Any]]) -> None:
        req = urllib.request.Request(
            self.webhook_url,
            data=json.dumps({"text": text, "blocks": blocks}).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req) as response:
            if response.status != 200:
                raise Exception(f"Webhook request failed with status {response.status}")

    def _post_bot(self, text: str, blocks: List[Dict[str, Any]]) -> None:
        response = self.client.chat_postMessage(channel=self.channel, text=text, blocks=blocks)
        if not response["ok"]:
            raise Exception(f"Bot message failed: {response.get('error', 'Unknown error')}")

    def alert(self, message: str, cell: str, details: Dict[str, Any]) -> None:
        text = f"Matrix cell {cell} failed: {failure_summary(message, details)}"
        try:
            blocks = self.build_blocks(message, cell, details)
            if self.webhook_url:
                self._post_webhook(text, blocks)
            else:
                self._post_bot(text, blocks)
        except Exception as e:
            print(f"Error sending Slack notification: {e}", file=sys.stderr)
            StderrAlerter().alert(message, cell, details)


def make_alerter(kind: Optional[str] = None) -> Alerter:
    if kind == "slack":
        return SlackAlerter()
    if kind in (None, "stderr"):
        return StderrAlerter()
    raise ValueError(f"Unknown alerter {kind!r}; choose 'stderr' or 'slack'")
