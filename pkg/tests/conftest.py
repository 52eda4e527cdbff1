import pytest


def pytest_addoption(parser):
    """
    Add execution options to the commandline
    :param parser:
    :return:
    """

    parser.addoption(
        "--runintegration", action="store_true", default=False, help=f"run integration tests"
    )


def pytest_configure(config):
    """
    Add pytext init lines
    :param config:
    :return:
    """
    config.addinivalue_line("markers", "integration: Mark test as integration.")


def pytest_collection_modifyitems(config, items):
    """
    Modify the tests to skip integration unless specified
    :param config:
    :param items:
    :return:
    """

    # Determine if any markers need to be skipped.
    if config.getoption("--runintegration"):
        # --runintegration given in cli: do not skip integration tests
        return

    markers_skip_integration = pytest.mark.skip(reason="need --runintegration option to run")

    for item in items:
        if "integration" in item.keywords:
            item.add_marker(markers_skip_integration)


@pytest.fixture
def parallel_specimen():
    """
    Two straight edges 10 mm apart along x with cuts at x = 30, 50 and 80 mm
    """
    from histo3d.core.phantom import generate
    return generate({"shape": "parallel-lines", "extent_mm": 100, "width_mm": 10,
                     "cut_positions": [0.3, 0.5, 0.8]})


@pytest.fixture
def half_cylinder_specimen():
    """
    Quarter arc edges with five cuts and rendered slides
    """
    from histo3d.core.phantom import generate
    return generate({"shape": "half-cylinder", "cut_count": 5, "slides": True, "seed": 3})


@pytest.fixture(scope="module")
def phantom():
    """
    Bone phantom split at its bisection face, moving half displaced by 2 degrees and 2 mm
    """
    from histo3d.core.phantom import render_phantom
    return render_phantom({"rotation_deg": 2.0, "translation_mm": 2.0, "seed": 11})


@pytest.fixture
def synthetic_case(tmp_path):
    """
    Case directory of a bent prism specimen with slides and a variant markup placement
    """
    from histo3d.core.fileio import write_case
    from histo3d.core.phantom import generate
    specimen = generate({"shape": "bent-prism", "cut_count": 4, "slides": True, "variant_jitter_mm": 0.2,
                         "seed": 5})
    return specimen, write_case(specimen, str(tmp_path / "case"))
