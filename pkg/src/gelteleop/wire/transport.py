"""Socket transports carrying the frame codec.

Two front doors, one codec. The raw TCP listener speaks bare frames
back-to-back on the stream. The web listener speaks HTTP on the same
port: plain GETs serve the operator console's static files, and a
websocket upgrade turns the connection into a binary-message channel
where each websocket message is exactly one codec frame.

The websocket side implements the subset of RFC 6455 a browser needs:
the SHA-1 accept handshake, masked client frames, binary/ping/pong/
close opcodes, and message fragmentation on receive.
"""

from __future__ import annotations

import base64
import hashlib
import socket
import struct
import threading
from pathlib import Path

from .codec import decode_prefix

__all__ = ["RawFrameServer", "WebServer", "WebSocketClient", "connect_raw"]

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".ico": "image/x-icon",
    ".svg": "image/svg+xml",
}


class _ClientRegistry:
    """Connected clients with per-connection write locks."""

    def __init__(self):
        self._lock = threading.Lock()
        self._clients: dict[int, tuple[socket.socket, threading.Lock]] = {}
        self._next_id = 0

    def add(self, sock: socket.socket) -> int:
        with self._lock:
            self._next_id += 1
            self._clients[self._next_id] = (sock, threading.Lock())
            return self._next_id

    def remove(self, client_id: int) -> None:
        with self._lock:
            self._clients.pop(client_id, None)

    def snapshot(self):
        with self._lock:
            return list(self._clients.items())

    def get(self, client_id: int):
        with self._lock:
            return self._clients.get(client_id)


class _ServerBase:
    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._clients = _ClientRegistry()
        self._running = False

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(8)
        self.port = listener.getsockname()[1]  # resolves port 0 to the real one
        self._listener = listener
        self._running = True
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)

    def stop(self) -> None:
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for client_id, (sock, _) in self._clients.snapshot():
            try:
                sock.close()
            except OSError:
                pass
            self._clients.remove(client_id)
        for thread in self._threads:
            thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            thread = threading.Thread(target=self._serve_client, args=(sock,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve_client(self, sock: socket.socket) -> None:
        raise NotImplementedError


class RawFrameServer(_ServerBase):
    """Bare codec frames over TCP; one reader thread per connection.

    ``on_frame(client_id, message, seq, timestamp_ns)`` runs on the
    reader thread; it must hand work off without blocking the socket.
    """

    def __init__(self, host: str, port: int, on_frame=None):
        super().__init__(host, port)
        self.on_frame = on_frame

    def _serve_client(self, sock: socket.socket) -> None:
        client_id = self._clients.add(sock)
        buffer = b""
        try:
            while self._running:
                try:
                    chunk = sock.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buffer += chunk
                while True:
                    result = decode_prefix(buffer)
                    if result is None:
                        break
                    (message, seq, ts), consumed = result
                    buffer = buffer[consumed:]
                    if self.on_frame is not None:
                        self.on_frame(client_id, message, seq, ts)
        except Exception:
            return  # malformed stream: drop the connection
        finally:
            self._clients.remove(client_id)
            try:
                sock.close()
            except OSError:
                pass

    def send(self, client_id: int, frame: bytes) -> bool:
        entry = self._clients.get(client_id)
        if entry is None:
            return False
        sock, lock = entry
        try:
            with lock:
                sock.sendall(frame)
            return True
        except OSError:
            self._clients.remove(client_id)
            return False

    def broadcast(self, frame: bytes) -> int:
        sent = 0
        for client_id, _ in self._clients.snapshot():
            if self.send(client_id, frame):
                sent += 1
        return sent


def connect_raw(host: str, port: int) -> socket.socket:
    """Client-side raw frame connection (tests and tools)."""
    sock = socket.create_connection((host, port), timeout=5.0)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    data = b""
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        data += chunk
    return data


def ws_encode_frame(payload: bytes, opcode: int = 0x2, mask: bool = False) -> bytes:
    """One websocket frame; clients must mask, servers must not."""
    head = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0x00
    if n < 126:
        head += bytes([mask_bit | n])
    elif n < 65536:
        head += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        head += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if not mask:
        return head + payload
    key = struct.pack(">I", 0x37FA213D)  # fixed key: masking is framing, not secrecy
    masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return head + key + masked


def ws_read_message(sock: socket.socket) -> tuple[int, bytes]:
    """Read one complete websocket message, reassembling fragments.

    Returns (opcode, payload). Control frames interleaved between
    fragments are returned to the caller individually, per RFC they
    cannot be fragmented themselves.
    """
    message = b""
    message_opcode = None
    while True:
        b0, b1 = _recv_exact(sock, 2)
        fin = bool(b0 & 0x80)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", _recv_exact(sock, 2))
        elif length == 127:
            (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
        key = _recv_exact(sock, 4) if masked else None
        payload = _recv_exact(sock, length) if length else b""
        if key is not None:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        if opcode >= 0x8:  # control frame: never fragmented
            return opcode, payload
        if message_opcode is None:
            message_opcode = opcode
        message += payload
        if fin:
            return message_opcode, message


class WebServer(_ServerBase):
    """Static files plus websocket frame channel on one port.

    A request with a websocket upgrade header becomes a binary frame
    connection handled like the raw server; anything else is answered
    from ``web_root`` and closed.
    """

    def __init__(self, host: str, port: int, web_root=None, on_frame=None, on_connect=None):
        super().__init__(host, port)
        self.web_root = Path(web_root) if web_root is not None else None
        self.on_frame = on_frame
        self.on_connect = on_connect

    def _serve_client(self, sock: socket.socket) -> None:
        try:
            request = self._read_request(sock)
        except (OSError, ConnectionError):
            sock.close()
            return
        if request is None:
            sock.close()
            return
        path, headers = request
        if headers.get("upgrade", "").lower() == "websocket":
            self._serve_websocket(sock, headers)
        else:
            self._serve_static(sock, path)

    def _read_request(self, sock: socket.socket):
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return None
            data += chunk
            if len(data) > 65536:
                return None
        head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
        lines = head.split("\r\n")
        parts = lines[0].split(" ")
        if len(parts) != 3 or parts[0] != "GET":
            return None
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                headers[name.strip().lower()] = value.strip()
        return parts[1], headers

    def _serve_websocket(self, sock: socket.socket, headers: dict) -> None:
        key = headers.get("sec-websocket-key")
        if not key:
            sock.close()
            return
        accept = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        sock.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )
        client_id = self._clients.add(sock)
        if self.on_connect is not None:
            self.on_connect(client_id)
        try:
            while self._running:
                opcode, payload = ws_read_message(sock)
                if opcode == 0x8:  # close
                    entry = self._clients.get(client_id)
                    if entry is not None:
                        with entry[1]:
                            sock.sendall(ws_encode_frame(payload, opcode=0x8))
                    return
                if opcode == 0x9:  # ping
                    entry = self._clients.get(client_id)
                    if entry is not None:
                        with entry[1]:
                            sock.sendall(ws_encode_frame(payload, opcode=0xA))
                    continue
                if opcode != 0x2:
                    continue
                result = decode_prefix(payload)
                if result is None:
                    continue
                (message, seq, ts), _ = result
                if self.on_frame is not None:
                    self.on_frame(client_id, message, seq, ts)
        except (OSError, ConnectionError, ValueError):
            return
        finally:
            self._clients.remove(client_id)
            try:
                sock.close()
            except OSError:
                pass

    def _serve_static(self, sock: socket.socket, path: str) -> None:
        try:
            status, body, content_type = self._lookup(path)
            response = (
                f"HTTP/1.1 {status}\r\n"
                f"Content-Type: {content_type}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode() + body
            sock.sendall(response)
        except OSError:
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def _lookup(self, path: str) -> tuple[str, bytes, str]:
        if self.web_root is None:
            return "404 Not Found", b"no static content configured\n", "text/plain"
        name = path.split("?", 1)[0]
        if name in ("", "/"):
            name = "/index.html"
        candidate = (self.web_root / name.lstrip("/")).resolve()
        root = self.web_root.resolve()
        if root not in candidate.parents and candidate != root:
            return "404 Not Found", b"not found\n", "text/plain"
        if not candidate.is_file():
            return "404 Not Found", b"not found\n", "text/plain"
        content_type = _CONTENT_TYPES.get(candidate.suffix, "application/octet-stream")
        return "200 OK", candidate.read_bytes(), content_type

    def send(self, client_id: int, frame: bytes) -> bool:
        entry = self._clients.get(client_id)
        if entry is None:
            return False
        sock, lock = entry
        try:
            with lock:
                sock.sendall(ws_encode_frame(frame, opcode=0x2))
            return True
        except OSError:
            self._clients.remove(client_id)
            return False

    def broadcast(self, frame: bytes) -> int:
        sent = 0
        for client_id, _ in self._clients.snapshot():
            if self.send(client_id, frame):
                sent += 1
        return sent


class WebSocketClient:
    """Minimal client for tests and tools: handshake, send, receive."""

    def __init__(self, host: str, port: int, path: str = "/ws"):
        self.sock = socket.create_connection((host, port), timeout=5.0)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        key = base64.b64encode(b"0123456789abcdef").decode()
        self.sock.sendall(
            (
                f"GET {path} HTTP/1.1\r\n"
                f"Host: {host}:{port}\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Key: {key}\r\n"
                "Sec-WebSocket-Version: 13\r\n\r\n"
            ).encode()
        )
        response = b""
        while b"\r\n\r\n" not in response:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("handshake failed")
            response += chunk
        status = response.split(b"\r\n", 1)[0]
        if b"101" not in status:
            raise ConnectionError(f"handshake rejected: {status!r}")
        expected = base64.b64encode(hashlib.sha1((key + _WS_GUID).encode()).digest())
        if expected not in response:
            raise ConnectionError("bad Sec-WebSocket-Accept")

    def send_frame(self, frame: bytes) -> None:
        self.sock.sendall(ws_encode_frame(frame, opcode=0x2, mask=True))

    def recv_frame(self, timeout: float = 5.0) -> bytes:
        self.sock.settimeout(timeout)
        while True:
            opcode, payload = ws_read_message(self.sock)
            if opcode == 0x2:
                return payload
            if opcode == 0x8:
                raise ConnectionError("server closed")

    def ping(self, payload: bytes = b"hi") -> bytes:
        self.sock.sendall(ws_encode_frame(payload, opcode=0x9, mask=True))
        opcode, answer = ws_read_message(self.sock)
        if opcode != 0xA:
            raise ConnectionError(f"expected pong, got opcode {opcode}")
        return answer

    def close(self) -> None:
        try:
            self.sock.sendall(ws_encode_frame(b"", opcode=0x8, mask=True))
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
