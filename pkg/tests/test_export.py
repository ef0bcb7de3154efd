import xml.etree.ElementTree as ET

import numpy as np
import pytest

from conftest import random_net, toy_model
from neuralabs.cegis import NeuralAbstraction
from neuralabs.certifier import ErrorBound
from neuralabs.errors import UnsupportedShape
from neuralabs.export import plot_svg, read_spaceex, spaceex_cfg, spaceex_xml
from neuralabs.hybridizer import build_automaton
from neuralabs.polylib import Polyhedron
from neuralabs.reach import reach


@pytest.fixture(scope="module")
def automaton():
    model = toy_model(["-y", "x - 0.3*y"], [[-1, 1], [-1, 1]], init=[[0.5, 0.6], [0.0, 0.1]], bad=[[-0.1, 0.1], [0.9, 1.0]])
    net = random_net(np.random.default_rng(7), 2, [5])
    return build_automaton(NeuralAbstraction(net, ErrorBound(np.array([0.02, 0.03])), model.domain), model)


def test_spaceex_round_trip_is_exact(automaton):
    back = read_spaceex(spaceex_xml(automaton), spaceex_cfg(automaton))
    assert back.dumps() == automaton.dumps()


def test_spaceex_structure(automaton):
    root = ET.fromstring(spaceex_xml(automaton))
    ns = root.tag.split("}")[0] + "}"
    comp = root.find(ns + "component")
    assert len(comp.findall(ns + "location")) == len(automaton.modes)
    assert len(comp.findall(ns + "transition")) == len(automaton.transitions)
    flow = comp.find(ns + "location").find(ns + "flow").text
    assert "x' ==" in flow and "d_x" in flow
    cfg = spaceex_cfg(automaton, step=0.05)
    assert 'system = "na"' in cfg and "sampling-time = 0.05" in cfg


def test_non_box_sets_cannot_be_exported(automaton):
    import copy

    ha = copy.copy(automaton)
    ha.init = Polyhedron(np.array([[1.0, 1.0]]), np.array([0.5]), automaton.domain)
    with pytest.raises(UnsupportedShape):
        spaceex_cfg(ha)


def test_svg_draws_every_mode(automaton):
    svg = plot_svg(automaton, reach(automaton))
    root = ET.fromstring(svg)
    polys = [el for el in root.iter() if el.get("class") == "mode"]
    assert len(polys) == len(automaton.modes)
    assert svg.count("<rect") > 1
