import pytest
import copy
import os
import socket
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np

from stancealign.adapters import SocketPolicy, handle_request, serve_policy
from stancealign.errors import AdapterError, ConfigError
from stancealign.grpo import GrpoConfig, grpo_train
from stancealign.policies import ToyTabularPolicy, load_policy, make_policy, template_for
from stancealign.prompts import prompt_for
from stancealign.rewards import RewardWeights
from stancealign.schema import render
from stancealign.splits import Split
from stancealign.stances import Stance
from stancealign.synthetic import persona


@pytest.fixture
def served():
    dataset = persona()
    policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids, init_scale=1.0, seed=3)
    twin = copy.deepcopy(policy)
    server = serve_policy(policy)
    client = SocketPolicy(server.endpoint, timeout=10.0)
    yield dataset, policy, twin, client
    client.close()
    server.shutdown()
    server.server_close()


class TestSocketPolicy:
    def test_sample_matches_local_policy(self, served):
        dataset, _, twin, client = served
        prompt = prompt_for(dataset, dataset.question("p03"))

        remote = client.sample(prompt, 16, 1.0, seed=7)
        local = twin.sample(prompt, 16, 1.0, seed=7)

        assert [c.text for c in remote] == [c.text for c in local]
        assert [c.token_logprobs for c in remote] == [c.token_logprobs for c in local]
        assert [c.stance for c in remote] == [c.stance for c in local]
        assert remote[0].question_id == "p03"

    def test_greedy_and_logprob(self, served):
        dataset, _, twin, client = served
        prompt = prompt_for(dataset, dataset.question("p01"))

        assert client.greedy_stance(prompt) is twin.greedy_stance(prompt)
        assert client.logprob(prompt, [0]) == pytest.approx(twin.logprob(prompt, [0]))
        assert client.count_tokens("a b  c") == 3

    def test_reference_requires_snapshot(self, served):
        dataset, _, _, client = served
        prompt = prompt_for(dataset, dataset.question("p01"))

        with pytest.raises(AdapterError, match="logprob"):
            client.logprob(prompt, [0], reference=True)

        client.snapshot_reference()
        assert client.logprob(prompt, [0], reference=True) == pytest.approx(client.logprob(prompt, [0]))

    def test_sft_update_reaches_server(self, served):
        dataset, policy, twin, client = served
        prompt = prompt_for(dataset, dataset.question("p02"))
        target = render(template_for("p02", Stance.NO), Stance.NO)

        remote_loss = client.sft_update([(prompt, target)], 0.5)
        local_loss = twin.sft_update([(prompt, target)], 0.5)

        assert remote_loss == pytest.approx(local_loss)
        assert np.allclose(policy.params["p02"], twin.params["p02"])

    def test_grpo_over_socket_matches_local_training(self, served):
        dataset, _, twin, client = served
        unit = dataset.unit("persona")
        split = Split(train_ids=tuple(dataset.question_ids), test_ids=(), strategy="random", seed=0)
        config = GrpoConfig(steps=10, warmup_steps=2, batch_questions=4, group_size=4, lr=0.5)

        _, remote_log = grpo_train(client, dataset, unit, split, RewardWeights(), config)
        _, local_log = grpo_train(twin, dataset, unit, split, RewardWeights(), config)

        assert remote_log.mean_rewards == pytest.approx(local_log.mean_rewards)

    def test_save_writes_server_side_checkpoint(self, served):
        dataset, _, _, client = served

        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "policy.json"
            client.save(path)

            restored = load_policy(path)

        assert set(restored.params) == set(dataset.question_ids)


class TestEndpoint:
    def test_environment_endpoint(self):
        with patch.dict(os.environ, {'STANCEALIGN_ADAPTER_ENDPOINT': '127.0.0.1:9999'}):
            policy = SocketPolicy()

        assert (policy.host, policy.port) == ("127.0.0.1", 9999)

    def test_missing_endpoint(self):
        with patch.dict(os.environ, {}, clear=True):
            with pytest.raises(ConfigError):
                SocketPolicy()

    @pytest.mark.parametrize("endpoint", ["localhost", ":80", "localhost:http"])
    def test_malformed_endpoint(self, endpoint):
        with pytest.raises(ConfigError):
            SocketPolicy(endpoint)

    def test_unreachable_adapter(self):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        port = listener.getsockname()[1]
        listener.close()
        dataset = persona()

        client = SocketPolicy(f"127.0.0.1:{port}", timeout=2.0)

        with pytest.raises(AdapterError):
            client.greedy_stance(prompt_for(dataset, dataset.question("p01")))

    def test_make_policy_socket_backend(self):
        dataset = persona()

        policy = make_policy("socket", dataset.label_space, endpoint="127.0.0.1:5000")

        assert isinstance(policy, SocketPolicy)


class TestHandleRequest:
    def test_unknown_op(self):
        dataset = persona()

        with pytest.raises(AdapterError):
            handle_request(ToyTabularPolicy(dataset.label_space), {"op": "fly"})

    def test_greedy_payload(self):
        dataset = persona()
        policy = ToyTabularPolicy(dataset.label_space, dataset.question_ids)
        policy.set_logits("p01", [-5.0, 5.0])
        request = {"op": "greedy", "prompt": prompt_for(dataset, dataset.question("p01")).to_json()}

        assert handle_request(policy, request) == {"stance": "No"}
