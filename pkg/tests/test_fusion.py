import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maps.agents import AgentFragment, SimulatedBackend
from maps.errors import CountBoundViolation, SchemaViolation
from maps.fusion import FusionConfig, fuse, fuse_users, match_users, merge_pair
from maps.sls import PerceivedUser, RelativePoint, ThroughputLevel, validate_sls, spec_to_tree

from oracles import check_fusion_properties, greedy_oracle
from strategies import fragments

L, M, H = ThroughputLevel.LOW, ThroughputLevel.MEDIUM, ThroughputLevel.HIGH


def img(label, x, y, level=L, demand=0.5, context="seen"):
    return PerceivedUser(label, RelativePoint(x, y), level, context, demand, frozenset({"image"}))


def aud(label, x=None, y=None, level=L, demand=0.5, context="heard"):
    pos = None if x is None else RelativePoint(x, y)
    return PerceivedUser(label, pos, level, context, demand, frozenset({"audio"}))


def frag(source, *users):
    return AgentFragment(source, users, 0.0)


def test_match_close_pair():
    m = match_users([img("a", 0.5, 0.5)], [aud("b", 0.52, 0.5)], 0.05)
    assert m.pairs == ((0, 0),)


def test_far_pair_unmatched():
    m = match_users([img("a", 0.1, 0.1)], [aud("b", 0.9, 0.9)], 0.05)
    assert m.pairs == () and m.unmatched_image == (0,) and m.unmatched_audio == (0,)


def test_positionless_audio_never_matches():
    m = match_users([img("a", 0.5, 0.5)], [aud("b")], 2.0)
    assert m.pairs == ()


def test_distance_bound_is_strict():
    m = match_users([img("a", 0.0, 0.0)], [aud("b", 0.25, 0.0)], 0.25)
    assert m.pairs == ()


def test_greedy_prefers_closest():
    image = [img("a", 0.50, 0.50), img("b", 0.53, 0.50)]
    audio = [aud("x", 0.54, 0.50)]
    assert match_users(image, audio, 0.05).pairs == ((1, 0),)


def test_tie_goes_to_lower_image_index():
    image = [img("a", 0.48, 0.5), img("b", 0.52, 0.5)]
    audio = [aud("x", 0.50, 0.5)]
    assert match_users(image, audio, 0.05).pairs == ((0, 0),)


def test_tie_goes_to_lower_audio_index():
    image = [img("a", 0.5, 0.5)]
    audio = [aud("x", 0.5, 0.52), aud("y", 0.5, 0.48)]
    assert match_users(image, audio, 0.05).pairs == ((0, 0),)


@pytest.mark.parametrize(
    "a, b, level, demand",
    [
        ((M, 5), (H, 20), H, 25.0),
        ((L, 0.5), (L, 0.5), L, 0.5),
        ((H, 20), (L, 0.5), H, 20),
        ((M, 5), (M, 4), H, 6.25),
    ],
)
def test_merge_pair(a, b, level, demand):
    merged = merge_pair(img("i", 0.3, 0.3, *a), aud("a", 0.3, 0.31, *b), FusionConfig())
    assert merged.throughput_level is level
    assert merged.traffic_demand == pytest.approx(demand)
    assert merged.position == RelativePoint(0.3, 0.3)
    assert merged.provenance == {"image", "audio"}
    assert merged.context == "seen; heard"


def test_three_plus_one_match_gives_three():
    image = frag("image", img("obj_1", 0.1, 0.1), img("obj_2", 0.5, 0.5), img("obj_3", 0.9, 0.9))
    audio = frag("audio", aud("audio_a", 0.51, 0.5))
    users = fuse_users(image, audio)
    assert len(users) == 3
    assert [u.label for u in users] == ["user_1", "user_2", "user_3"]
    assert users[1].provenance == {"image", "audio"}


def test_empty_audio_is_identity_up_to_labels():
    image = frag("image", img("obj_2", 0.9, 0.1), img("obj_1", 0.1, 0.1))
    users = fuse_users(image, AgentFragment.empty("audio"))
    assert [u.position for u in users] == [RelativePoint(0.1, 0.1), RelativePoint(0.9, 0.1)]


def test_empty_both_is_valid():
    spec = fuse(AgentFragment.empty("image"), AgentFragment.empty("audio"), scenario_id="s")
    assert spec.users == ()
    validate_sls(spec_to_tree(spec))


def test_positionless_users_last_in_audio_order():
    image = frag("image", img("obj_1", 0.5, 0.5))
    audio = frag("audio", aud("audio_z"), aud("audio_a"), aud("audio_p", 0.1, 0.9))
    users = fuse_users(image, audio)
    assert [u.context for u in users] == ["seen", "heard", "heard", "heard"]
    assert [u.position is None for u in users] == [False, False, True, True]
    assert users[0].position == RelativePoint(0.5, 0.5)
    assert users[1].position == RelativePoint(0.1, 0.9)


def test_fragment_order_irrelevant():
    image = frag("image", img("obj_1", 0.5, 0.5))
    audio = frag("audio", aud("audio_a", 0.5, 0.51, M, 5))
    assert fuse(image, audio) == fuse(audio, image)


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(epsilon=0)
    with pytest.raises(ValueError):
        FusionConfig(epsilon=1.5)
    with pytest.raises(ValueError):
        FusionConfig(escalation_uplift=0.9)
    with pytest.raises(ValueError):
        FusionConfig(mode="vote")


@settings(max_examples=300)
@given(fragments("image"), fragments("audio"), st.floats(0.01, 0.5))
def test_fusion_properties(image, audio, eps):
    check_fusion_properties(image, audio, FusionConfig(epsilon=eps))


@settings(max_examples=200)
@given(fragments("image", max_users=6), fragments("audio", max_users=6), st.floats(0.05, 0.6))
def test_greedy_matches_independent_oracle(image, audio, eps):
    matching = match_users(image.users, audio.users, eps)
    assert list(matching.pairs) == greedy_oracle(image.users, audio.users, eps)
    # greedy is maximal: no free pair left within eps
    free_j = [j for j in matching.unmatched_audio if audio.users[j].position is not None]
    for i in matching.unmatched_image:
        for j in free_j:
            assert image.users[i].position.distance(audio.users[j].position) >= eps


def test_delegated_mode_matches_rule_based():
    image = frag("image", img("obj_1", 0.2, 0.2, M, 5), img("obj_2", 0.7, 0.2))
    audio = frag("audio", aud("audio_a", 0.21, 0.2, H, 30), aud("audio_b"))
    config = FusionConfig(mode="model_delegated")
    spec = fuse(image, audio, config, backend=SimulatedBackend())
    assert spec.users == fuse(image, audio).users


def test_delegated_mode_needs_backend():
    with pytest.raises(ValueError):
        fuse(AgentFragment.empty("image"), AgentFragment.empty("audio"), FusionConfig(mode="model_delegated"))


def test_delegated_count_bound():
    image = frag("image", img("obj_1", 0.2, 0.2))
    backend = SimulatedBackend(malformation={"fusion": "extra_users:2"})
    with pytest.raises(CountBoundViolation) as err:
        fuse(image, AgentFragment.empty("audio"), FusionConfig(mode="model_delegated"), backend=backend)
    assert (err.value.got, err.value.bound) == (3, 1)


@pytest.mark.parametrize("mode", ["drop_field:provenance", "bad_enum:x", "drop_users"])
def test_delegated_schema_violation(mode):
    image = frag("image", img("obj_1", 0.2, 0.2))
    backend = SimulatedBackend(malformation={"fusion": mode})
    with pytest.raises(SchemaViolation):
        fuse(image, AgentFragment.empty("audio"), FusionConfig(mode="model_delegated"), backend=backend)
