import pytest

from isicap.engine import RsaConfig
from isicap.issues import partition_by_attribute, sample_context
from isicap.metrics import bundled_classifier_path, load_classifier_config
from isicap.speakers import TemplateSpeakerParams, template_speaker
from isicap.worlds import bundled_world_path, load_world


@pytest.fixture(scope="session")
def shapes6():
    return load_world(bundled_world_path())


@pytest.fixture(scope="session")
def shapes6_classifier():
    return load_classifier_config(bundled_classifier_path())


@pytest.fixture()
def backend(shapes6):
    return template_speaker(shapes6)


@pytest.fixture()
def color_issue(shapes6):
    return partition_by_attribute(shapes6, "color")


@pytest.fixture()
def size_issue(shapes6):
    return partition_by_attribute(shapes6, "size")


@pytest.fixture()
def o1_color_context(color_issue):
    # budget 40 covers the whole 6-image world
    return sample_context(color_issue, "o1", 40, 0)


@pytest.fixture()
def defaults():
    return RsaConfig()


@pytest.fixture()
def params():
    return TemplateSpeakerParams()
