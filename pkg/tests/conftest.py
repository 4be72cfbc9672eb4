import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


class _EmbedHandler(BaseHTTPRequestHandler):
    """Stub embedding service: deterministic fixed-dim vectors per text."""

    dim = 4
    fail_first = 0  # server-level countdown of forced 500s
    vary_dim_after = None  # switch dim after this many requests (for mismatch tests)

    def do_POST(self):
        server = self.server
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        server.request_count += 1
        if server.fail_remaining > 0:
            server.fail_remaining -= 1
            self.send_response(503)
            self.end_headers()
            return
        dim = server.dim
        if server.vary_dim_after is not None and server.request_count > server.vary_dim_after:
            dim = server.dim + 1
        vectors = [
            [float(len(text)), float(i), 1.0, 0.5][:dim] + [0.25] * max(0, dim - 4)
            for i, text in enumerate(body["texts"])
        ]
        payload = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    """Yields a factory that starts a stub embedding server and returns its URL."""
    servers = []

    def start(dim=4, fail_first=0, vary_dim_after=None):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _EmbedHandler)
        server.dim = dim
        server.fail_remaining = fail_first
        server.vary_dim_after = vary_dim_after
        server.request_count = 0
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_address[1]}/embed"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
