import pytest

from dtstereo.synth import RenderConfig, TrajectoryConfig, default_scene, render_sequence


@pytest.fixture(scope="session")
def default_frames():
    """Default static scene, seed 42, moving ego."""
    return render_sequence(default_scene(42), TrajectoryConfig(), RenderConfig())


@pytest.fixture(scope="session")
def moving_scene():
    return default_scene(42, moving=True)


@pytest.fixture(scope="session")
def moving_frames(moving_scene):
    return render_sequence(moving_scene, TrajectoryConfig(), RenderConfig())


@pytest.fixture(scope="session")
def static_ego_frames():
    return render_sequence(default_scene(42), TrajectoryConfig(static_ego=True), RenderConfig())


# acceptance verdict lines, repeated in the terminal summary so they survive output capture
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
