import { HttpApi } from "./api.js";
import { PlayController } from "./controller.js";
import { GameListView, PlayerView } from "./ui.js";

declare global {
    interface Window {
        // Instrumentation hook: chunk ids visited in the current session.
        __visitedChunkIds?: () => string[];
    }
}

async function boot(): Promise<void> {
    const root = document.getElementById("app");
    if (!root) {
        throw new Error("missing #app container");
    }
    const api = new HttpApi("");

    const startGame = async (storyId: string): Promise<void> => {
        const controller = new PlayController(api, storyId);
        window.__visitedChunkIds = () => controller.visitedChunkIds();
        const view = new PlayerView(root, controller, api, storyId);
        await view.mount();
    };

    const games = await api.listGames();
    if (games.length === 1) {
        await startGame(games[0].story_id);
        return;
    }
    new GameListView(root, (storyId) => {
        void startGame(storyId);
    }).render(games);
}

window.addEventListener("DOMContentLoaded", () => {
    void boot();
});
