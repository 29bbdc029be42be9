"""Minimal RFC 6455 WebSocket transport plus static-file fallback.

The editor protocol rides on WebSocket messages: JSON text frames for
control, kind-tagged binary frames for bulk payloads (see docs/protocol.md).
Only the features the protocol needs are implemented: HTTP upgrade,
text/binary/ping/pong/close frames, fragmentation reassembly, and client-side
masking. No extensions, no TLS.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct
import threading
from pathlib import Path
from typing import Callable

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
_MAX_FRAME = 256 * 1024 * 1024

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".svg": "image/svg+xml",
}


class ConnectionClosed(Exception):
    pass


class WsConnection:
    """One WebSocket endpoint; sends are serialized, receives are single-reader.

    ``initial`` holds bytes that arrived bundled with the handshake response
    and must be consumed before reading from the socket again.
    """

    def __init__(self, sock: socket.socket, *, mask_outgoing: bool, initial: bytes = b""):
        self._sock = sock
        self._mask = mask_outgoing
        self._pending = bytearray(initial)
        self._send_lock = threading.Lock()
        self._closed = False

    def _recv_exact(self, n: int) -> bytes:
        while len(self._pending) < n:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionClosed("peer closed the connection")
            self._pending += chunk
        out = bytes(self._pending[:n])
        del self._pending[:n]
        return out

    # -- frame encoding ----------------------------------------------------

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        head = bytearray([0x80 | opcode])
        n = len(payload)
        mask_bit = 0x80 if self._mask else 0
        if n < 126:
            head.append(mask_bit | n)
        elif n < 1 << 16:
            head.append(mask_bit | 126)
            head += struct.pack(">H", n)
        else:
            head.append(mask_bit | 127)
            head += struct.pack(">Q", n)
        if self._mask:
            key = os.urandom(4)
            head += key
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        with self._send_lock:
            self._sock.sendall(bytes(head) + payload)

    def send_text(self, text: str) -> None:
        self._send_frame(0x1, text.encode("utf-8"))

    def send_binary(self, payload: bytes) -> None:
        self._send_frame(0x2, payload)

    # -- frame decoding ----------------------------------------------------

    def _read_frame(self):
        b0, b1 = self._recv_exact(2)
        fin = bool(b0 & 0x80)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        n = b1 & 0x7F
        if n == 126:
            (n,) = struct.unpack(">H", self._recv_exact(2))
        elif n == 127:
            (n,) = struct.unpack(">Q", self._recv_exact(8))
        if n > _MAX_FRAME:
            raise ConnectionClosed(f"frame of {n} bytes exceeds limit")
        key = self._recv_exact(4) if masked else None
        payload = self._recv_exact(n)
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return fin, opcode, payload

    def recv(self):
        """Next data message as ("text", str) or ("binary", bytes); None on close."""
        buffer = bytearray()
        message_opcode = None
        while True:
            try:
                fin, opcode, payload = self._read_frame()
            except (ConnectionClosed, OSError):
                return None
            if opcode == 0x8:  # close
                try:
                    self._send_frame(0x8, payload[:2])
                except OSError:
                    pass
                return None
            if opcode == 0x9:  # ping
                self._send_frame(0xA, payload)
                continue
            if opcode == 0xA:  # pong
                continue
            if opcode in (0x1, 0x2):
                message_opcode = opcode
                buffer = bytearray(payload)
            elif opcode == 0x0 and message_opcode is not None:
                buffer += payload
            else:
                raise ConnectionClosed(f"unexpected opcode {opcode}")
            if fin:
                if message_opcode == 0x1:
                    return "text", buffer.decode("utf-8")
                return "binary", bytes(buffer)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._send_frame(0x8, b"")
            except OSError:
                pass
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()


def _http_error(sock: socket.socket, code: int, reason: str) -> None:
    body = reason.encode()
    sock.sendall(
        f"HTTP/1.1 {code} {reason}\r\nContent-Type: text/plain\r\n"
        f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n".encode() + body
    )


def _serve_static(sock: socket.socket, static_dir: Path, path: str) -> None:
    rel = path.split("?", 1)[0].lstrip("/") or "index.html"
    target = (static_dir / rel).resolve()
    if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
        _http_error(sock, 404, "not found")
        return
    body = target.read_bytes()
    ctype = _CONTENT_TYPES.get(target.suffix.lower(), "application/octet-stream")
    sock.sendall(
        f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\nContent-Length: {len(body)}\r\n"
        "Connection: close\r\n\r\n".encode() + body
    )


class WsServer:
    """Threaded WebSocket server; one handler thread per connection.

    ``on_connection`` receives a WsConnection for every upgraded socket.
    Plain GET requests are served from ``static_dir`` when given.
    """

    def __init__(self, host: str, port: int, on_connection: Callable[[WsConnection], None],
                 static_dir: str | os.PathLike | None = None):
        self._on_connection = on_connection
        self._static_dir = Path(static_dir) if static_dir else None
        self._listener = socket.create_server((host, port))
        self._closing = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self) -> "WsServer":
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._handle_socket, args=(sock,), daemon=True).start()

    def _handle_socket(self, sock: socket.socket) -> None:
        try:
            head = b""
            while b"\r\n\r\n" not in head:
                chunk = sock.recv(4096)
                if not chunk:
                    sock.close()
                    return
                head += chunk
                if len(head) > 65536:
                    _http_error(sock, 431, "headers too large")
                    sock.close()
                    return
            request, _, leftover = head.partition(b"\r\n\r\n")
            lines = request.decode("latin-1").split("\r\n")
            parts = lines[0].split()
            if len(parts) != 3 or parts[0] != "GET":
                _http_error(sock, 405, "method not allowed")
                sock.close()
                return
            path = parts[1]
            headers = {}
            for line in lines[1:]:
                if ":" in line:
                    key, value = line.split(":", 1)
                    headers[key.strip().lower()] = value.strip()

            if headers.get("upgrade", "").lower() != "websocket":
                if self._static_dir is not None:
                    _serve_static(sock, self._static_dir, path)
                else:
                    _http_error(sock, 404, "websocket endpoint only")
                sock.close()
                return

            key = headers.get("sec-websocket-key")
            if not key:
                _http_error(sock, 400, "missing Sec-WebSocket-Key")
                sock.close()
                return
            accept = base64.b64encode(
                hashlib.sha1((key + _WS_GUID).encode()).digest()
            ).decode()
            sock.sendall(
                "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                f"Connection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n".encode()
            )
            conn = WsConnection(sock, mask_outgoing=False, initial=leftover)
            try:
                self._on_connection(conn)
            finally:
                conn.close()
        except (OSError, ConnectionClosed):
            try:
                sock.close()
            except OSError:
                pass

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass

    def join(self) -> None:
        try:
            self._accept_thread.join()
        except KeyboardInterrupt:
            self.close()

    def serve_forever(self) -> None:
        self.start()
        self.join()


def connect_ws(host: str, port: int, path: str = "/ws", timeout: float = 10.0) -> WsConnection:
    """Open a client WebSocket connection (used by tests and scripts)."""
    sock = socket.create_connection((host, port), timeout=timeout)
    key = base64.b64encode(os.urandom(16)).decode()
    sock.sendall(
        f"GET {path} HTTP/1.1\r\nHost: {host}:{port}\r\nUpgrade: websocket\r\n"
        f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n".encode()
    )
    buffer = b""
    while b"\r\n\r\n" not in buffer:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionClosed("server closed during handshake")
        buffer += chunk
    head, _, leftover = buffer.partition(b"\r\n\r\n")
    status = head.split(b"\r\n", 1)[0]
    if b"101" not in status:
        raise ConnectionClosed(f"handshake rejected: {status.decode('latin-1')}")
    expected = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest())
    if expected not in head:
        raise ConnectionClosed("bad Sec-WebSocket-Accept from server")
    sock.settimeout(timeout)
    return WsConnection(sock, mask_outgoing=True, initial=leftover)
