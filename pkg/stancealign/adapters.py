"""Out-of-process policy boundary: line-delimited JSON over a local socket.

A heavyweight LM backend runs behind ``serve_policy`` (or any server speaking
the same protocol) and the training loop talks to it through ``SocketPolicy``.
Each request is one JSON object per line with an ``op`` field; each reply is
one JSON object per line with ``ok`` and either the payload or ``error``.
"""
import json
import logging
import os
import socket
import socketserver
import threading
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .errors import AdapterError, ConfigError
from .policies import Completion, PolicyContract, RlSample
from .prompts import PromptSpec
from .schema import parse
from .stances import Stance

logger = logging.getLogger(__name__)


def _split_endpoint(endpoint: str) -> Tuple[str, int]:
    host, _, port = endpoint.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"Adapter endpoint must look like host:port, got {endpoint!r}")
    return host, int(port)


class SocketPolicy(PolicyContract):
    def __init__(self, endpoint: Optional[str] = None, timeout: float = 300.0):
        self.endpoint = endpoint or os.getenv("STANCEALIGN_ADAPTER_ENDPOINT")
        if not self.endpoint:
            raise ConfigError("Either an endpoint or STANCEALIGN_ADAPTER_ENDPOINT must be provided")
        self.host, self.port = _split_endpoint(self.endpoint)
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._stream = None
        self._lock = threading.Lock()

    def _connect(self) -> None:
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as e:
            raise AdapterError(f"Cannot reach policy adapter at {self.endpoint}: {e}")
        self._stream = self._sock.makefile("rwb")

    def close(self) -> None:
        if self._sock is not None:
            self._stream.close()
            self._sock.close()
            self._sock = self._stream = None

    def _call(self, op: str, **payload: Any) -> Dict[str, Any]:
        with self._lock:
            if self._sock is None:
                self._connect()
            request = dict(payload, op=op)
            try:
                self._stream.write(json.dumps(request).encode("utf-8") + b"\n")
                self._stream.flush()
                line = self._stream.readline()
            except OSError as e:
                self.close()
                raise AdapterError(f"Policy adapter connection failed during '{op}': {e}")
        if not line:
            self.close()
            raise AdapterError(f"Policy adapter closed the connection during '{op}'")
        reply = json.loads(line.decode("utf-8"))
        if not reply.get("ok"):
            raise AdapterError(f"Policy adapter rejected '{op}': {reply.get('error', 'unknown error')}")
        return reply

    def sample(self, prompt: PromptSpec, n: int, temperature: float, seed: int) -> List[Completion]:
        reply = self._call("sample", prompt=prompt.to_json(), n=n, temperature=temperature, seed=seed)
        return [_completion_from_json(c, prompt) for c in reply["completions"]]

    def greedy_stance(self, prompt: PromptSpec) -> Optional[Stance]:
        stance = self._call("greedy", prompt=prompt.to_json()).get("stance")
        return None if stance is None else Stance.parse(stance)

    def logprob(self, prompt: PromptSpec, token_ids: Sequence[int], reference: bool = False) -> float:
        return float(self._call(
            "logprob", prompt=prompt.to_json(), token_ids=list(token_ids), reference=reference,
        )["logprob"])

    def sft_update(self, batch, learning_rate: float, max_grad_norm: Optional[float] = None) -> float:
        items = [{"prompt": p.to_json(), "target": t} for p, t in batch]
        return float(self._call(
            "sft", batch=items, learning_rate=learning_rate, max_grad_norm=max_grad_norm,
        )["loss"])

    def rl_update(self, batch: Sequence[RlSample], clip_range: float, kl_coefficient: float, learning_rate: float):
        items = [
            {"prompt": s.prompt.to_json(), "completion": s.completion.to_json(), "advantage": s.advantage}
            for s in batch
        ]
        return self._call(
            "rl", batch=items, clip_range=clip_range, kl_coefficient=kl_coefficient, learning_rate=learning_rate,
        )["metrics"]

    def snapshot_reference(self) -> None:
        self._call("snapshot")

    def count_tokens(self, text: str) -> int:
        return int(self._call("count_tokens", text=text)["count"])

    def save(self, path) -> None:
        self._call("save", path=str(path))


def _completion_from_json(data: Dict[str, Any], prompt: PromptSpec) -> Completion:
    return Completion(
        text=data["text"],
        token_ids=list(data["token_ids"]),
        token_logprobs=list(data["token_logprobs"]),
        parse=parse(data["text"], prompt.label_space),
        question_id=prompt.question_id,
    )


def handle_request(policy: PolicyContract, request: Dict[str, Any]) -> Dict[str, Any]:
    op = request.get("op")
    if op == "sample":
        prompt = PromptSpec.from_json(request["prompt"])
        completions = policy.sample(prompt, request["n"], request["temperature"], request["seed"])
        return {"completions": [c.to_json() for c in completions]}
    if op == "greedy":
        stance = policy.greedy_stance(PromptSpec.from_json(request["prompt"]))
        return {"stance": None if stance is None else stance.value}
    if op == "logprob":
        prompt = PromptSpec.from_json(request["prompt"])
        return {"logprob": policy.logprob(prompt, request["token_ids"], request.get("reference", False))}
    if op == "sft":
        batch = [(PromptSpec.from_json(i["prompt"]), i["target"]) for i in request["batch"]]
        return {"loss": policy.sft_update(batch, request["learning_rate"], request.get("max_grad_norm"))}
    if op == "rl":
        batch = []
        for item in request["batch"]:
            prompt = PromptSpec.from_json(item["prompt"])
            batch.append(RlSample(prompt, _completion_from_json(item["completion"], prompt), item["advantage"]))
        metrics = policy.rl_update(
            batch, request["clip_range"], request["kl_coefficient"], request["learning_rate"]
        )
        return {"metrics": metrics}
    if op == "snapshot":
        policy.snapshot_reference()
        return {}
    if op == "count_tokens":
        return {"count": policy.count_tokens(request["text"])}
    if op == "save":
        policy.save(request["path"])
        return {}
    raise AdapterError(f"Unknown op {op!r}")


class _PolicyRequestHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            try:
                request = json.loads(line.decode("utf-8"))
                with self.server.update_lock:
                    reply = dict(handle_request(self.server.policy, request), ok=True)
            except Exception as e:
                logger.warning("Policy request failed: %s", e)
                reply = {"ok": False, "error": str(e)}
            self.wfile.write(json.dumps(reply).encode("utf-8") + b"\n")
            self.wfile.flush()


class PolicyServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, policy: PolicyContract, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _PolicyRequestHandler)
        self.policy = policy
        self.update_lock = threading.Lock()

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


def serve_policy(policy: PolicyContract, host: str = "127.0.0.1", port: int = 0) -> PolicyServer:
    """Start serving ``policy`` on a background thread; call ``shutdown()`` to stop."""
    server = PolicyServer(policy, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    logger.info("Serving %s on %s", type(policy).__name__, server.endpoint)
    return server
