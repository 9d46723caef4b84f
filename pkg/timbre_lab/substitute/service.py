"""
HTTP front for a black-box oracle.

POST /query   body: MELSPEC1 bytes       -> POSTER01 bytes
GET  /health                             -> {"status": "ok", "nSpeakers": ..., ...}

A POSTER01 reply is the magic, u64 query count, u32 length, then that many
little-endian float32 posterior entries. Budget exhaustion maps to 429,
malformed mel bodies to 400; error bodies are JSON.
"""
import numpy as np
import requests
from flask import Flask, Response, jsonify, request

from timbre_lab.audiofeat import MelSpectrogram, decode_mel, encode_mel
from timbre_lab.binio import Reader, Writer
from timbre_lab.errors import ArtifactFormatError, BudgetExhaustedError, InvalidArgumentError
from timbre_lab.logs import log_event, log_exception

POSTERIOR_MAGIC = b"POSTER01"
POSTERIOR_MIMETYPE = "application/octet-stream"


def encode_posterior(posterior, query_count):
    posterior = np.asarray(posterior, dtype=np.float64).ravel()
    return Writer(POSTERIOR_MAGIC).u64(query_count).u32(posterior.size).floats(posterior).getvalue()


def decode_posterior(data, what="oracle reply"):
    """
    Parse a POSTER01 reply.

    Returns:
        tuple: (posterior as float64 array, query count)

    Raises:
        ArtifactFormatError: On bad magic, truncation or trailing bytes
    """
    reader = Reader(data, POSTERIOR_MAGIC, what=what)
    query_count = reader.u64()
    length = reader.u32()
    if length < 2:
        raise ArtifactFormatError(f"{what}: posterior length {length} < 2")
    posterior = reader.floats((length,))
    reader.finish()
    return posterior, query_count


def create_response(status_code, body):
    """JSON response with the status logged at INFO or WARNING"""
    log_event(
        "INFO" if status_code < 400 else "WARNING",
        "Oracle API response",
        statusCode=status_code,
        path=request.path,
    )
    response = jsonify(body)
    response.status_code = status_code
    return response


def create_app(oracle):
    """
    Flask app serving ``oracle.query`` over HTTP.

    Args:
        oracle (BlackBoxOracle): The only object the app can reach

    Returns:
        Flask
    """
    app = Flask("timbre_lab_oracle")

    @app.route("/health", methods=["GET"])
    def health():
        return create_response(200, {
            "status": "ok",
            "nSpeakers": oracle.n_speakers,
            "nMels": oracle.n_mels,
            "queryCount": oracle.query_count,
            "queryBudget": oracle.query_budget,
        })

    @app.route("/query", methods=["POST"])
    def query():
        try:
            mel = decode_mel(request.get_data(), what="request body")
            if mel.n_mels != oracle.n_mels:
                raise InvalidArgumentError(f"expected {oracle.n_mels} mel bins, got {mel.n_mels}")
            posterior = oracle.query(mel.values)
        except BudgetExhaustedError as e:
            return create_response(429, {"error": "BudgetExhausted", "message": str(e)})
        except (ArtifactFormatError, InvalidArgumentError) as e:
            return create_response(400, {"error": "Bad Request", "message": str(e)})
        except Exception as e:
            log_exception("Oracle query failed", e)
            return create_response(500, {"error": "Internal server error", "message": "An unexpected error occurred"})
        log_event("INFO", "Oracle API response", statusCode=200, path=request.path, queryCount=oracle.query_count)
        return Response(encode_posterior(posterior, oracle.query_count), status=200, mimetype=POSTERIOR_MIMETYPE)

    return app


class RemoteOracle:
    """
    Client for an oracle served by ``create_app``; drop-in for BlackBoxOracle
    wherever only ``query`` and the shape attributes are used.
    """

    def __init__(self, base_url, session=None, timeout=30.0):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout = timeout
        info = self._get("/health")
        self.n_speakers = int(info["nSpeakers"])
        self.n_mels = int(info["nMels"])
        self.query_budget = info.get("queryBudget")
        self.query_count = int(info.get("queryCount", 0))

    def _get(self, path):
        response = self.session.get(self.base_url + path, timeout=self.timeout)
        if response.status_code != 200:
            raise RuntimeError(f"Oracle health check failed: {response.status_code} - {response.text}")
        return response.json()

    def query(self, m):
        """
        Posterior for one mel from the remote oracle.

        Raises:
            BudgetExhaustedError: On HTTP 429
            InvalidArgumentError: On HTTP 400
            RuntimeError: On any other non-200 status
            ArtifactFormatError: On a malformed POSTER01 reply
        """
        mel = m if isinstance(m, MelSpectrogram) else MelSpectrogram(values=m)
        response = self.session.post(
            self.base_url + "/query",
            data=encode_mel(mel),
            headers={"Content-Type": "application/octet-stream"},
            timeout=self.timeout,
        )
        if response.status_code == 429:
            raise BudgetExhaustedError(response.json().get("message", "query budget exhausted"))
        if response.status_code == 400:
            raise InvalidArgumentError(response.json().get("message", "oracle rejected the mel"))
        if response.status_code != 200:
            raise RuntimeError(f"Oracle request failed: {response.status_code} - {response.text}")
        posterior, self.query_count = decode_posterior(response.content)
        if posterior.size != self.n_speakers:
            raise ArtifactFormatError(f"oracle reply: {posterior.size} classes, expected {self.n_speakers}")
        return posterior
