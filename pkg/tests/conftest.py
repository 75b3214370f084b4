import http.server
import socket
import sys
import threading
import time

import numpy as np
import pytest

from goc_fdr.world import Action, ObjectState, RobotState, Workspace

TABLE_TOP = 0.75
PALLET_TOP = 0.12


def make_workspace():
    """Table with one parcel, a pallet and one robot; no motions queued."""
    table = ObjectState(1, "table", [0.0, 0.0, 0.375], [0.4, 0.4, 0.375])
    parcel = ObjectState(2, "parcel", [0.0, -0.2, TABLE_TOP + 0.075], [0.1, 0.1, 0.075])
    pallet = ObjectState(3, "pallet", [1.3, 0.0, 0.06], [0.4, 0.4, 0.06])
    robot = RobotState(10, "robot", [0.5, 0.0, 1.05])
    return Workspace([table, parcel, pallet], [robot])


PALLET_SLOT = (1.1, -0.2, PALLET_TOP + 0.075)


def palletise_actions():
    return [Action("pick", "parcel"), Action("place", "parcel", "pallet", PALLET_SLOT)]


@pytest.fixture
def ws():
    return make_workspace()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class LoopbackServer:
    """Loopback planner returning a fixed body, optionally after a delay."""

    def __init__(self, body: str, delay: float = 0.0):
        outer = self
        self.requests: list[str] = []

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                outer.requests.append(self.rfile.read(n).decode())
                time.sleep(delay)
                data = body.encode()
                self.send_response(200)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except OSError:
                    pass

            def log_message(self, *args):
                pass

        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/plan"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
