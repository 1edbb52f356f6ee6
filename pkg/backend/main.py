"""FastAPI entry point for the adaptive safety simulator."""

import os

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from backend.routes import models, simulation
from experiment_store import TOOL_VERSION

app = FastAPI(
    title="Adaptive Safety Simulator API",
    description="Closed-loop adaptive CLF/CBF simulations, Monte Carlo batches and sweeps.",
    version=TOOL_VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=[
        origin.strip()
        for origin in os.getenv("ADAPTIVE_SAFETY_CORS_ORIGINS", "http://localhost:3000,http://localhost:5173").split(",")
        if origin.strip()
    ],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(models.router, prefix="/api")
app.include_router(simulation.router, prefix="/api")


@app.get("/api/health")
def api_health():
    return {"status": "ok", "service": "adaptive-safety-api"}


@app.get("/health", tags=["system"])
def health():
    return {"status": "ok", "service": "adaptive-safety-api"}
