"""Provider plumbing: parsing, retry/backoff, record/replay."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moltext.llmclient import (
    CannedProvider,
    CredentialError,
    FlakyProvider,
    HttpTextProvider,
    LlmPrediction,
    MappingProvider,
    NetworkRefusingProvider,
    ParseEmptyError,
    ProviderConfig,
    ProviderError,
    RecordingProvider,
    ReplayProvider,
    TransportError,
    parse_response,
    prompt_sha256,
    query,
    render_response,
)


class TestParseResponse:
    def test_numbered_list_with_explanation(self):
        raw = "1. CCO\n2. CC=O\nExplanation: ethanol vs acetaldehyde"
        pred = parse_response(raw, r_max=4)
        assert pred.ranked_smiles == ("CCO", "CC=O")
        assert pred.explanation == "ethanol vs acetaldehyde"
        assert pred.raw == raw

    def test_dedup_keeps_first_occurrence(self):
        pred = parse_response("1. CCO\n2. CCO\n3. CCN", r_max=4)
        assert pred.ranked_smiles == ("CCO", "CCN")

    def test_r_max_cap(self):
        raw = "\n".join(f"{i}. C{'C' * i}" for i in range(1, 8))
        pred = parse_response(raw, r_max=4)
        assert len(pred.ranked_smiles) == 4

    def test_prose_only_raises(self):
        with pytest.raises(ParseEmptyError, match="no candidates"):
            parse_response("I cannot determine the structure.", r_max=4)

    def test_labelled_smiles_line(self):
        pred = parse_response("SMILES: c1ccccc1", r_max=2)
        assert pred.ranked_smiles == ("c1ccccc1",)

    def test_fenced_block(self):
        pred = parse_response("```\nCCO\nCCN\n```", r_max=4)
        assert pred.ranked_smiles == ("CCO", "CCN")

    def test_multiline_explanation(self):
        raw = "1. CCO\nExplanation:\nfirst line\nsecond line"
        pred = parse_response(raw, r_max=4)
        assert pred.explanation == "first line\nsecond line"

    def test_explanation_case_insensitive(self):
        pred = parse_response("1. CCO\nEXPLANATION - because.", r_max=4)
        assert pred.explanation == "because."

    def test_parenthesis_rank_style(self):
        pred = parse_response("1) CCO\n2) CCN", r_max=4)
        assert pred.ranked_smiles == ("CCO", "CCN")

    def test_candidates_after_explanation_ignored(self):
        pred = parse_response("1. CCO\nExplanation: done\n2. CCN", r_max=4)
        assert pred.ranked_smiles == ("CCO",)
        assert "2. CCN" in pred.explanation

    def test_round_trip_fixture(self):
        pred = LlmPrediction(
            ranked_smiles=("CCO", "CC=O", "OCC"),
            explanation="three guesses",
            raw="",
            provider_id="x",
        )
        back = parse_response(render_response(pred), r_max=4)
        assert back.ranked_smiles == pred.ranked_smiles
        assert back.explanation == pred.explanation

    @given(
        st.lists(
            st.text(alphabet="CNOclBr=#()123", min_size=1, max_size=12),
            min_size=1, max_size=4, unique=True,
        ),
        st.text(alphabet="abcdefgh ", min_size=0, max_size=30),
    )
    @settings(max_examples=150)
    def test_round_trip_property(self, candidates, explanation):
        pred = LlmPrediction(
            ranked_smiles=tuple(candidates),
            explanation=explanation.strip(),
            raw="",
            provider_id="",
        )
        back = parse_response(render_response(pred), r_max=len(candidates))
        assert back.ranked_smiles == pred.ranked_smiles
        assert back.explanation == pred.explanation

    def test_length_bound_property(self):
        raw = "\n".join(f"{i}. X{i}" for i in range(1, 20))
        for r in (1, 3, 7):
            assert len(parse_response(raw, r_max=r).ranked_smiles) <= r


class TestQuery:
    def _cfg(self, retries=3):
        return ProviderConfig(max_retries=retries)

    def test_canned_passthrough(self):
        out = query("p", CannedProvider("hello"), self._cfg(), sleep_fn=lambda s: None)
        assert out == "hello"

    def test_retry_then_success(self, tmp_path):
        provider = FlakyProvider(CannedProvider("ok"), fail_times=2)
        delays = []
        log = tmp_path / "replay.jsonl"
        out = query("p", provider, self._cfg(3), log_path=log,
                    sleep_fn=delays.append)
        assert out == "ok"
        assert provider.calls == 3
        records = [json.loads(l) for l in log.read_text().splitlines()]
        assert len(records) == 3
        assert records[0]["raw_response"] is None
        assert records[2]["raw_response"] == "ok"
        assert all(r["prompt_sha256"] == prompt_sha256("p") for r in records)

    def test_backoff_schedule(self):
        provider = FlakyProvider(CannedProvider("ok"), fail_times=2)
        delays = []
        query("p", provider, self._cfg(3), sleep_fn=delays.append)
        # base 1s, factor 2, jitter in [0, 1)
        assert 1.0 <= delays[0] < 2.0
        assert 2.0 <= delays[1] < 3.0

    def test_exhausted_retries(self):
        provider = FlakyProvider(CannedProvider("ok"), fail_times=5)
        with pytest.raises(TransportError, match="after 3 attempts"):
            query("p", provider, self._cfg(3), sleep_fn=lambda s: None)
        assert provider.calls == 3

    def test_credential_error_not_retried(self):
        class AuthFails:
            provider_id = "auth"
            calls = 0

            def complete(self, prompt):
                self.calls += 1
                raise CredentialError("bad token")

        provider = AuthFails()
        with pytest.raises(CredentialError):
            query("p", provider, self._cfg(3), sleep_fn=lambda s: None)
        assert provider.calls == 1


class TestRecordReplay:
    def test_record_then_replay_identical(self, tmp_path):
        log = tmp_path / "log.jsonl"
        recorder = RecordingProvider(CannedProvider("1. CCO"), log)
        assert recorder.complete("my prompt") == "1. CCO"
        replay = ReplayProvider(log)
        assert replay.complete("my prompt") == "1. CCO"

    def test_replay_miss(self, tmp_path):
        log = tmp_path / "log.jsonl"
        RecordingProvider(CannedProvider("x"), log).complete("known")
        with pytest.raises(ProviderError, match="replay miss"):
            ReplayProvider(log).complete("unknown")

    def test_missing_log(self, tmp_path):
        with pytest.raises(ProviderError, match="replay log not found"):
            ReplayProvider(tmp_path / "absent.jsonl")

    def test_log_records_shape(self, tmp_path):
        log = tmp_path / "log.jsonl"
        RecordingProvider(CannedProvider("resp"), log).complete("prompt")
        rec = json.loads(log.read_text().splitlines()[0])
        assert set(rec) == {"prompt_sha256", "raw_response", "provider_id", "timestamp"}
        assert rec["prompt_sha256"] == prompt_sha256("prompt")

    def test_network_refusing_provider(self):
        with pytest.raises(AssertionError, match="network use refused"):
            NetworkRefusingProvider().complete("anything")


class TestMappingProvider:
    def test_answers_known_query(self):
        provider = MappingProvider({"ethanol": ["CCO", "OCC"]})
        raw = provider.complete("intro\n\nDescription: ethanol\nSMILES:")
        pred = parse_response(raw, r_max=4)
        assert pred.ranked_smiles == ("CCO", "OCC")
        assert pred.explanation

    def test_uses_last_marker(self):
        provider = MappingProvider({"target": ["CCN"]})
        prompt = "Description: demo pair\nSMILES: CCO\n\nDescription: target\nSMILES:"
        assert "CCN" in provider.complete(prompt)

    def test_fallback_on_unknown(self):
        provider = MappingProvider({})
        raw = provider.complete("Description: mystery\nSMILES:")
        assert parse_response(raw, r_max=4).ranked_smiles == ("C",)


class TestProviderConfig:
    def test_secret_never_on_config(self, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "s3cret-value")
        cfg = ProviderConfig(credential_env="TEST_LLM_KEY")
        assert "s3cret-value" not in repr(cfg)
        assert "s3cret-value" not in str(cfg)

    def test_http_provider_requires_env_name(self):
        with pytest.raises(CredentialError, match="credential env var"):
            HttpTextProvider(
                ProviderConfig(endpoint="https://example.test/v1"),
                getenv=lambda name: None,
            )

    def test_http_provider_missing_secret(self):
        provider = HttpTextProvider(
            ProviderConfig(endpoint="https://example.test/v1",
                           credential_env="ABSENT_KEY"),
            getenv=lambda name: None,
        )
        with pytest.raises(CredentialError, match="ABSENT_KEY"):
            provider.complete("p")
