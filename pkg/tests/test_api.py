"""Test suite for the API endpoints."""
import json
import math

import pytest
from fastapi.testclient import TestClient

from api.main import app

client = TestClient(app)

FAST = {"n_frames": 3, "iterations_per_scale": [2, 2], "epsilon_halving_period": 2}


@pytest.fixture
def synthesized(runs_dir, scene_files):
    """A noiseless three-frame case created through the API."""
    sharp_path, alpha_path = scene_files
    response = client.post("/synthesize", json={
        "sharp_path": str(sharp_path),
        "alpha_path": str(alpha_path),
        "motion": "translate 0.06",
        "n_frames": 3,
        "noise": 0.0,
        "run_id": "case",
    })
    assert response.status_code == 200
    return response.json()


class TestAPIEndpoints:
    """Test API endpoint functionality."""

    def test_root_endpoint(self):
        """Test root endpoint."""
        response = client.get("/")
        assert response.status_code == 200
        assert "message" in response.json()
        assert "/extract" in response.json()["endpoints"]

    def test_health_endpoint(self, runs_dir):
        """Test health check endpoint."""
        response = client.get("/health")
        assert response.status_code == 200
        data = response.json()
        assert data["status"] == "healthy"
        assert data["runs_dir"] == str(runs_dir)
        assert data["runs_dir_exists"] is False

    def test_runs_empty(self, runs_dir):
        """No runs directory means no runs."""
        response = client.get("/runs")
        assert response.status_code == 200
        assert response.json() == []

    def test_unknown_run(self, runs_dir):
        """Unknown run ids are 404."""
        response = client.get("/runs/nope")
        assert response.status_code == 404


class TestPipelineEndpoints:
    """Test synthesize, extract and evaluate over HTTP."""

    def test_synthesize(self, synthesized, runs_dir):
        """The case lands in its run directory."""
        assert synthesized["run_id"] == "case"
        assert synthesized["status"] == "success"
        assert synthesized["params"] == [1.0, 0.0, 0.06, 0.0, 1.0, 0.0]
        assert (runs_dir / "case" / "blurred.png").exists()

    def test_full_pipeline(self, synthesized, runs_dir):
        """synthesize, extract and evaluate chain through run directories."""
        case = runs_dir / "case"
        response = client.post("/extract", json={
            "blurred_path": str(case / "blurred.png"),
            "alpha_paths": [str(case / "alpha.png")],
            "config": FAST,
            "run_id": "result",
        })
        assert response.status_code == 200
        data = response.json()
        assert data["run_id"] == "result"
        assert data["objects"] == 1
        assert len(data["params"]) == 1 and len(data["params"][0]) == 6

        response = client.post("/evaluate", json={
            "result_dir": str(runs_dir / "result"),
            "truth_dir": str(case),
        })
        assert response.status_code == 200
        report = json.loads(response.text)
        assert len(report["frames"]) == 3
        assert math.isfinite(report["mean_ssim"])
        assert len(report["params"]["absolute"]) == 6

        runs = client.get("/runs").json()
        assert {r["run_id"] for r in runs} == {"case", "result"}
        result = next(r for r in runs if r["run_id"] == "result")
        assert result["commands"] == ["evaluate", "extract"]

        manifests = client.get("/runs/result").json()
        assert {m["command"] for m in manifests} == {"extract", "evaluate"}

    def test_self_evaluation_has_infinite_psnr(self, synthesized, runs_dir):
        """Identical frames come back as Infinity rather than an error."""
        case = str(runs_dir / "case")
        response = client.post("/evaluate", json={"result_dir": case, "truth_dir": case})
        assert response.status_code == 200
        assert json.loads(response.text)["mean_psnr"] == float("inf")

    def test_invalid_motion(self, runs_dir, scene_files):
        """Bad motion specs are 422."""
        sharp_path, alpha_path = scene_files
        response = client.post("/synthesize", json={
            "sharp_path": str(sharp_path),
            "alpha_path": str(alpha_path),
            "motion": "wobble 3",
        })
        assert response.status_code == 422

    def test_invalid_solver_config(self, synthesized, runs_dir):
        """An even frame count in the config is 422."""
        case = runs_dir / "case"
        response = client.post("/extract", json={
            "blurred_path": str(case / "blurred.png"),
            "alpha_paths": [str(case / "alpha.png")],
            "config": {"n_frames": 4},
        })
        assert response.status_code == 422

    def test_no_alpha_paths(self, synthesized, runs_dir):
        """At least one alpha map is required."""
        response = client.post("/extract", json={
            "blurred_path": str(runs_dir / "case" / "blurred.png"),
            "alpha_paths": [],
        })
        assert response.status_code == 422

    def test_missing_input(self, runs_dir, tmp_path):
        """Missing input files are 404."""
        response = client.post("/extract", json={
            "blurred_path": str(tmp_path / "missing.png"),
            "alpha_paths": [str(tmp_path / "alpha.png")],
        })
        assert response.status_code == 404

    def test_invalid_run_id(self, runs_dir, scene_files):
        """Run ids cannot escape the runs directory."""
        sharp_path, alpha_path = scene_files
        response = client.post("/synthesize", json={
            "sharp_path": str(sharp_path),
            "alpha_path": str(alpha_path),
            "run_id": "..",
        })
        assert response.status_code == 422
