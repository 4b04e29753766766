import pytest
from hypothesis import settings

from fuzzmon import rules as rule_dsl
from fuzzmon.knowledge_base import KnowledgeBase, LinguisticVariable
from fuzzmon.monitor import default_variables, shipped_rules

settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def util_var():
    return LinguisticVariable("util", 0.0, 100.0, ("low", "normal", "extreme"))


@pytest.fixture
def expert_rules():
    return rule_dsl.parse(shipped_rules())


@pytest.fixture
def empty_kb(expert_rules):
    return KnowledgeBase(default_variables(), expert_rules)
